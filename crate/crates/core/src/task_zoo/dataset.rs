use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use super::idx::{downscale, read_idx};
use crate::error::{Error, Result};
use crate::numkit::{RngKey, Tensor};

/// Environment variable naming the directory that holds IDX datasets.
pub const DATA_DIR_ENV: &str = "VELO_DATA_DIR";

/// Rows per synthetic image dataset.
pub const SYNTHETIC_ROWS: usize = 1024;
/// Bytes per synthetic text corpus.
pub const SYNTHETIC_TEXT_LEN: usize = 1 << 15;
const VALID_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// Flattened square images in `[0, 1]` with integer class labels.
    Images { side: usize },
    /// A single byte stream; minibatches are random windows.
    Text,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub kind: DatasetKind,
    /// `[N, D]` for images, `[N]` byte values for text.
    pub inputs: Tensor,
    /// Class index per row (images only).
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    /// Rows `0..train_len` form the training split, the rest validation.
    pub train_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Batch {
    Images {
        x: Vec<f64>,
        y: Vec<usize>,
        rows: usize,
        dim: usize,
    },
    Text {
        tokens: Vec<u8>,
        rows: usize,
        len: usize,
    },
}

impl Dataset {
    /// Row width: pixels per image, 1 for text.
    pub fn dim(&self) -> usize {
        match self.inputs.shape() {
            [_, d] => *d,
            _ => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training rows sampled with replacement. For text, `window` is the
    /// number of bytes per row.
    pub fn minibatch(&self, key: RngKey, rows: usize, window: usize) -> Batch {
        let mut g = key.generator();
        match self.kind {
            DatasetKind::Images { .. } => {
                let dim = self.dim();
                let labels = self.labels.as_ref().expect("image dataset has labels");
                let mut x = Vec::with_capacity(rows * dim);
                let mut y = Vec::with_capacity(rows);
                for _ in 0..rows {
                    let i = g.below(self.train_len as u64) as usize;
                    x.extend_from_slice(self.inputs.row(i));
                    y.push(labels[i]);
                }
                Batch::Images { x, y, rows, dim }
            }
            DatasetKind::Text => {
                let data = self.inputs.data();
                let span = self.train_len.saturating_sub(window).max(1);
                let mut tokens = Vec::with_capacity(rows * window);
                for _ in 0..rows {
                    let start = g.below(span as u64) as usize;
                    tokens.extend(data[start..start + window].iter().map(|&b| b as u8));
                }
                Batch::Text {
                    tokens,
                    rows,
                    len: window,
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticKind {
    /// Gaussian class clusters; `separation` scales the distance between
    /// class means relative to the within-class spread.
    Clusters { separation: f64 },
    /// Bytes from a random sparse Markov chain over a small alphabet.
    Text,
}

pub fn synthetic_dataset(kind: SyntheticKind, key: RngKey, n: usize, dim: usize, classes: usize) -> Dataset {
    let n = n.max(2);
    let train_len = ((n as f64) * (1.0 - VALID_FRACTION)).round().max(1.0) as usize;
    match kind {
        SyntheticKind::Clusters { separation } => {
            let dim = dim.max(1);
            let classes = classes.max(1);
            let mut cg = key.fold_label("centers").generator();
            let centers: Vec<f64> = (0..classes * dim).map(|_| cg.normal()).collect();
            let mut g = key.fold_label("points").generator();
            let mut x = Vec::with_capacity(n * dim);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let c = g.below(classes as u64) as usize;
                y.push(c);
                for d in 0..dim {
                    let v = 0.5 + 0.15 * (separation * centers[c * dim + d] + g.normal());
                    x.push(v.clamp(0.0, 1.0));
                }
            }
            Dataset {
                id: format!("synthetic:{}:{separation}", key.seed),
                kind: DatasetKind::Images {
                    side: (dim as f64).sqrt().round() as usize,
                },
                inputs: Tensor::new(vec![n, dim], x).expect("shape by construction"),
                labels: Some(y),
                num_classes: classes,
                train_len,
            }
        }
        SyntheticKind::Text => {
            const ALPHABET: usize = 32;
            const FANOUT: usize = 4;
            let mut tg = key.fold_label("transitions").generator();
            let symbols = b"abcdefghijklmnopqrstuvwxyz .,;:!";
            let next: Vec<[usize; FANOUT]> = (0..ALPHABET)
                .map(|_| std::array::from_fn(|_| tg.below(ALPHABET as u64) as usize))
                .collect();
            let mut g = key.fold_label("stream").generator();
            let mut state = 0usize;
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    state = next[state][g.weighted_index(&[0.55, 0.25, 0.15, 0.05])];
                    f64::from(symbols[state])
                })
                .collect();
            Dataset {
                id: format!("text:{}", key.seed),
                kind: DatasetKind::Text,
                inputs: Tensor::vector(data),
                labels: None,
                num_classes: 256,
                train_len,
            }
        }
    }
}

/// Load an image dataset from IDX image/label files, scaling pixels to
/// `[0, 1]` and resizing to `side × side` by area averaging.
pub fn load_idx_pair(images: &Path, labels: &Path, side: usize, id: &str) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 {
        return Err(Error::Dataset(format!(
            "{id}: expected 3-D images and 1-D labels, got {:?} and {:?}",
            img.dims, lab.dims
        )));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if h != w || lab.dims[0] != n || n == 0 {
        return Err(Error::Dataset(format!(
            "{id}: inconsistent shapes {:?} / {:?}",
            img.dims, lab.dims
        )));
    }
    let mut x = Vec::with_capacity(n * side * side);
    let mut buf = vec![0.0; h * w];
    for i in 0..n {
        for (b, &p) in buf.iter_mut().zip(&img.data[i * h * w..(i + 1) * h * w]) {
            *b = f64::from(p) / 255.0;
        }
        x.extend(downscale(&buf, h, side));
    }
    let y: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    let num_classes = y.iter().max().map_or(1, |m| m + 1);
    let train_len = ((n as f64) * (1.0 - VALID_FRACTION)).round().max(1.0) as usize;
    Ok(Dataset {
        id: id.to_string(),
        kind: DatasetKind::Images { side },
        inputs: Tensor::new(vec![n, side * side], x)?,
        labels: Some(y),
        num_classes,
        train_len,
    })
}

/// Load a single IDX file as a dataset without labels (images flattened).
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let arr = read_idx(path)?;
    let n = arr.dims[0];
    let dim: usize = arr.dims[1..].iter().product::<usize>().max(1);
    let x: Vec<f64> = arr.data.iter().map(|&p| f64::from(p) / 255.0).collect();
    let kind = if arr.dims.len() == 3 && arr.dims[1] == arr.dims[2] {
        DatasetKind::Images { side: arr.dims[1] }
    } else {
        DatasetKind::Text
    };
    let inputs = if arr.dims.len() == 1 {
        Tensor::new(vec![n], x)?
    } else {
        Tensor::new(vec![n, dim], x)?
    };
    Ok(Dataset {
        id: path.display().to_string(),
        kind,
        inputs,
        labels: None,
        num_classes: 0,
        train_len: n,
    })
}

fn data_dir() -> Result<PathBuf> {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Dataset(format!("{DATA_DIR_ENV} is not set")))
}

fn parse_seed(part: Option<&str>, id: &str) -> Result<u64> {
    part.unwrap_or("0")
        .parse()
        .map_err(|_| Error::Dataset(format!("bad seed in dataset id {id:?}")))
}

/// Resolve a dataset id for the given image side and class count.
///
/// Ids: `synthetic:<seed>[:<separation>]`, `text:<seed>`, `mnist`,
/// `fashion_mnist` (the latter two read `$VELO_DATA_DIR/<id>/`).
pub fn resolve_dataset(id: &str, side: usize, classes: usize) -> Result<Arc<Dataset>> {
    type Cache = Mutex<HashMap<(String, usize, usize), Arc<Dataset>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let cache_key = (id.to_string(), side, classes);
    if let Some(d) = cache.lock().expect("dataset cache poisoned").get(&cache_key) {
        return Ok(d.clone());
    }

    let mut parts = id.split(':');
    let ds = match parts.next() {
        Some("synthetic") => {
            let seed = parse_seed(parts.next(), id)?;
            let separation = match parts.next() {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Dataset(format!("bad separation in {id:?}")))?,
                None => 1.0,
            };
            let mut d = synthetic_dataset(
                SyntheticKind::Clusters { separation },
                RngKey::new(seed).fold_label("synthetic"),
                SYNTHETIC_ROWS,
                side * side,
                classes,
            );
            d.kind = DatasetKind::Images { side };
            d.id = id.to_string();
            d
        }
        Some("text") => {
            let seed = parse_seed(parts.next(), id)?;
            let mut d = synthetic_dataset(
                SyntheticKind::Text,
                RngKey::new(seed).fold_label("text"),
                SYNTHETIC_TEXT_LEN,
                1,
                256,
            );
            d.id = id.to_string();
            d
        }
        Some(name @ ("mnist" | "fashion_mnist")) => {
            let dir = data_dir()?.join(name);
            let d = load_idx_pair(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                side,
                id,
            )?;
            if classes > d.num_classes {
                return Err(Error::Dataset(format!(
                    "{id} has {} classes, config asks for {classes}",
                    d.num_classes
                )));
            }
            d
        }
        _ => return Err(Error::Dataset(format!("unknown dataset id {id:?}"))),
    };
    let ds = Arc::new(ds);
    cache
        .lock()
        .expect("dataset cache poisoned")
        .insert(cache_key, ds.clone());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(d: &Dataset) -> f64 {
        let dim = d.inputs.shape()[1];
        let labels = d.labels.as_ref().unwrap();
        let k = d.num_classes;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        let half = d.len() / 2;
        for i in 0..half {
            counts[labels[i]] += 1;
            for (s, &v) in sums[labels[i] * dim..].iter_mut().zip(d.inputs.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            for s in &mut sums[c * dim..(c + 1) * dim] {
                *s /= counts[c].max(1) as f64;
            }
        }
        let correct = (half..d.len())
            .filter(|&i| {
                let row = d.inputs.row(i);
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = row.iter().zip(&sums[a * dim..]).map(|(x, m)| (x - m).powi(2)).sum();
                        let db: f64 = row.iter().zip(&sums[b * dim..]).map(|(x, m)| (x - m).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == labels[i]
            })
            .count();
        correct as f64 / (d.len() - half) as f64
    }

    #[test]
    fn zero_separation_is_chance() {
        let d = synthetic_dataset(SyntheticKind::Clusters { separation: 0.0 }, RngKey::new(5), 20_000, 16, 4);
        let acc = nearest_centroid_accuracy(&d);
        assert!((acc - 0.25).abs() < 0.03, "accuracy {acc}");
    }

    #[test]
    fn large_separation_is_easy() {
        let d = synthetic_dataset(SyntheticKind::Clusters { separation: 5.0 }, RngKey::new(5), 4000, 16, 4);
        assert!(nearest_centroid_accuracy(&d) > 0.99);
        assert!(d.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn same_key_same_data() {
        let a = synthetic_dataset(SyntheticKind::Clusters { separation: 1.0 }, RngKey::new(9), 100, 4, 3);
        let b = synthetic_dataset(SyntheticKind::Clusters { separation: 1.0 }, RngKey::new(9), 100, 4, 3);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn minibatch_reproducible() {
        let d = resolve_dataset("synthetic:3", 4, 3).unwrap();
        let k = RngKey::new(11);
        assert_eq!(d.minibatch(k, 8, 0), d.minibatch(k, 8, 0));
        let t = resolve_dataset("text:1", 1, 256).unwrap();
        match t.minibatch(k, 2, 9) {
            Batch::Text { tokens, .. } => assert_eq!(tokens.len(), 18),
            other => panic!("{other:?}"),
        }
    }
}
