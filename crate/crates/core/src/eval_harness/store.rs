use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::train::{CurveRecord, LearningCurve};

const INDEX_FILE: &str = "index.tsv";

/// JSON-lines curves under `<root>/curves/<task>/<optimizer>/<seed>.jsonl`,
/// one record per line, with a content-hash index for dedupe.
#[derive(Clone, Debug)]
pub struct CurveStore {
    root: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PutOutcome {
    Written(PathBuf),
    /// Identical content already stored at this path.
    Duplicate(PathBuf),
}

/// Path-safe, reversible form of an id: bytes outside `[A-Za-z0-9_-]`
/// become `%XX`.
fn component(s: &str) -> String {
    if s.is_empty() {
        return "%".to_string();
    }
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_component(s: &str) -> Option<String> {
    if s == "%" {
        return Some(String::new());
    }
    let b = s.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(b[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn encode(curve: &LearningCurve) -> Result<String> {
    let mut text = String::new();
    for r in &curve.records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(format!("curve record: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    Ok(text)
}

fn content_hash(curve: &LearningCurve, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(curve.task_id.as_bytes());
    h.update([0]);
    h.update(curve.optimizer_id.as_bytes());
    h.update([0]);
    h.update(curve.seed.to_le_bytes());
    h.update(body.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl CurveStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn curves_dir(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn path_for(&self, task_id: &str, optimizer_id: &str, seed: u64) -> PathBuf {
        self.curves_dir()
            .join(component(task_id))
            .join(component(optimizer_id))
            .join(format!("{seed}.jsonl"))
    }

    fn index(&self) -> Result<BTreeMap<String, PathBuf>> {
        let path = self.root.join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(text
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .map(|(h, p)| (h.to_string(), PathBuf::from(p)))
            .collect())
    }

    pub fn put(&self, curve: &LearningCurve) -> Result<PutOutcome> {
        curve.validate()?;
        let body = encode(curve)?;
        let hash = content_hash(curve, &body);
        if let Some(p) = self.index()?.get(&hash) {
            if self.root.join(p).exists() {
                return Ok(PutOutcome::Duplicate(self.root.join(p)));
            }
        }
        let path = self.path_for(&curve.task_id, &curve.optimizer_id, curve.seed);
        let dir = path.parent().expect("curve path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        let rel = path.strip_prefix(&self.root).unwrap_or(&path).to_path_buf();
        let index_path = self.root.join(INDEX_FILE);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(|e| Error::io(&index_path, e))?;
        writeln!(f, "{hash}\t{}", rel.display()).map_err(|e| Error::io(&index_path, e))?;
        Ok(PutOutcome::Written(path))
    }

    pub fn get(&self, task_id: &str, optimizer_id: &str, seed: u64) -> Result<LearningCurve> {
        let path = self.path_for(task_id, optimizer_id, seed);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut curve = LearningCurve::new(task_id, optimizer_id, seed);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CurveRecord = serde_json::from_str(line).map_err(|e| Error::CurveFormat {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            curve.records.push(rec);
        }
        curve.validate().map_err(|e| Error::CurveFormat {
            path: path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(curve)
    }

    /// `(optimizer, seed)` pairs stored for a task, sorted.
    pub fn list(&self, task_id: &str) -> Result<Vec<(String, u64)>> {
        let dir = self.curves_dir().join(component(task_id));
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for opt in entries {
            let opt = opt.map_err(|e| Error::io(&dir, e))?;
            let Some(opt_name) = decode_component(&opt.file_name().to_string_lossy()) else {
                continue;
            };
            let opt_dir = opt.path();
            for f in fs::read_dir(&opt_dir).map_err(|e| Error::io(&opt_dir, e))? {
                let f = f.map_err(|e| Error::io(&opt_dir, e))?;
                let name = f.file_name().to_string_lossy().into_owned();
                if let Some(seed) = name.strip_suffix(".jsonl").and_then(|s| s.parse().ok()) {
                    out.push((opt_name.clone(), seed));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Every stored curve for a task.
    pub fn load_task(&self, task_id: &str) -> Result<Vec<LearningCurve>> {
        self.list(task_id)?
            .into_iter()
            .map(|(opt, seed)| self.get(task_id, &opt, seed))
            .collect()
    }

    pub fn tasks(&self) -> Result<Vec<String>> {
        let dir = self.curves_dir();
        let mut out = Vec::new();
        match fs::read_dir(&dir) {
            Ok(entries) => {
                for e in entries {
                    let e = e.map_err(|e| Error::io(&dir, e))?;
                    if let Some(name) = decode_component(&e.file_name().to_string_lossy()) {
                        out.push(name);
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&dir, e)),
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(opt: &str, seed: u64) -> LearningCurve {
        let mut c = LearningCurve::new("task/a", opt, seed);
        for (s, l) in [(0, 2.0), (1, 1.5), (2, f64::INFINITY)] {
            c.records.push(CurveRecord {
                step: s,
                loss: l,
                wall_time_s: s as f64 * 0.1,
                step_sizes: None,
            });
        }
        c
    }

    #[test]
    fn put_get_list_and_dedupe() {
        let dir = tempfile::tempdir().unwrap();
        let store = CurveStore::new(dir.path());
        let a = curve("adam", 0);
        assert!(matches!(store.put(&a).unwrap(), PutOutcome::Written(_)));
        assert!(matches!(store.put(&a).unwrap(), PutOutcome::Duplicate(_)));
        store.put(&curve("sgd", 1)).unwrap();
        assert_eq!(store.get("task/a", "adam", 0).unwrap(), a);
        assert_eq!(
            store.list("task/a").unwrap(),
            vec![("adam".to_string(), 0), ("sgd".to_string(), 1)]
        );
    }

    #[test]
    fn ids_round_trip_through_paths() {
        for id in ["", ".", "..", "velo@step_2", "a/b", "100%", "λ x"] {
            let c = component(id);
            assert!(!c.contains('/') && c != "." && c != "..", "{c}");
            assert_eq!(decode_component(&c).as_deref(), Some(id));
        }
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let store = CurveStore::new(dir.path());
        store.put(&curve("adam", 0)).unwrap();
        let p = store.path_for("task/a", "adam", 0);
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{not json\n");
        fs::write(&p, text).unwrap();
        match store.get("task/a", "adam", 0) {
            Err(Error::CurveFormat { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
