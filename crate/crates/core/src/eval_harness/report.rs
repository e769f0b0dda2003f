use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-task speedups are clipped to this before averaging.
pub const SPEEDUP_CLIP: f64 = 30.0;
/// Per-task costs (reciprocal speedups) are clipped to this.
pub const COST_CLIP: f64 = 10.0;
pub const PERCENTILES: [f64; 5] = [5.0, 10.0, 25.0, 50.0, 75.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub optimizer: String,
    pub tasks: usize,
    pub mean_speedup: f64,
    pub mean_cost: f64,
    /// Values at [`PERCENTILES`].
    pub percentiles: Vec<f64>,
    /// Speedups sorted ascending, for the sorted-speedup plot.
    pub sorted: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<OptimizerSummary>,
}

/// Linear interpolation between closest ranks of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn aggregate_report(speedups: &BTreeMap<String, Vec<f64>>) -> Report {
    let rows = speedups
        .iter()
        .map(|(name, vals)| {
            let mut sorted: Vec<f64> = vals.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len().max(1) as f64;
            let mean_speedup = sorted.iter().map(|s| s.min(SPEEDUP_CLIP)).sum::<f64>() / n;
            let mean_cost = sorted.iter().map(|s| (1.0 / s).min(COST_CLIP)).sum::<f64>() / n;
            OptimizerSummary {
                optimizer: name.clone(),
                tasks: sorted.len(),
                mean_speedup,
                mean_cost,
                percentiles: PERCENTILES.iter().map(|&q| percentile(&sorted, q)).collect(),
                sorted,
            }
        })
        .collect();
    Report { rows }
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("optimizer,tasks,mean_speedup,mean_cost");
        for q in PERCENTILES {
            let _ = write!(s, ",p{q}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.optimizer, r.tasks, r.mean_speedup, r.mean_cost);
            for p in &r.percentiles {
                let _ = write!(s, ",{p}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Sorted speedups per optimizer on a log-scaled y axis.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const PAD: f64 = 50.0;
        const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
        let finite = |v: f64| v.is_finite() && v > 0.0;
        let vals: Vec<f64> = self.rows.iter().flat_map(|r| r.sorted.iter().copied()).filter(|&v| finite(v)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min).min(0.1).log10();
        let hi = vals.iter().copied().fold(0.0f64, f64::max).max(10.0).log10();
        let y = |v: f64| H - PAD - (v.log10() - lo) / (hi - lo) * (H - 2.0 * PAD);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
             <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n",
            b = H - PAD,
            r = W - PAD
        );
        let one = y(1.0);
        let _ = writeln!(
            s,
            "<line x1=\"{PAD}\" y1=\"{one:.2}\" x2=\"{}\" y2=\"{one:.2}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>",
            W - PAD
        );
        let mut decade = lo.ceil() as i32;
        while decade as f64 <= hi {
            let v = 10f64.powi(decade);
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{v}</text>",
                PAD - 4.0,
                y(v) + 4.0
            );
            decade += 1;
        }
        for (k, r) in self.rows.iter().enumerate() {
            let pts: Vec<f64> = r.sorted.iter().copied().filter(|&v| finite(v)).collect();
            if pts.is_empty() {
                continue;
            }
            let n = pts.len().max(2) - 1;
            let mut d = String::new();
            for (i, &v) in pts.iter().enumerate() {
                let x = PAD + i as f64 / n as f64 * (W - 2.0 * PAD);
                let _ = write!(d, "{}{x:.2},{:.2} ", if i == 0 { "M" } else { "L" }, y(v));
            }
            let color = COLORS[k % COLORS.len()];
            let _ = writeln!(
                s,
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                d.trim_end()
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
                PAD + 10.0,
                PAD + 16.0 * (k as f64 + 1.0),
                r.optimizer
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Write `report.csv`, `report.json` and `report.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.csv", self.to_csv()),
            ("report.json", self.to_json()),
            ("report.svg", self.to_svg()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(vals: &[f64]) -> OptimizerSummary {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), vals.to_vec());
        aggregate_report(&m).rows.remove(0)
    }

    #[test]
    fn examples() {
        let r = one(&[1.0; 4]);
        assert_eq!((r.mean_speedup, r.mean_cost), (1.0, 1.0));
        assert!(r.percentiles.iter().all(|&p| p == 1.0));
        let r = one(&[2.0, 8.0]);
        assert_eq!((r.mean_speedup, r.mean_cost), (5.0, 0.3125));
        assert_eq!(one(&[100.0]).mean_speedup, 30.0);
        assert_eq!(one(&[0.01]).mean_cost, 10.0);
    }

    #[test]
    fn svg_is_well_formed() {
        let mut m = BTreeMap::new();
        m.insert("velo".to_string(), vec![0.5, 2.0, 4.0]);
        m.insert("adam".to_string(), vec![1.0, 1.0]);
        let svg = aggregate_report(&m).to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 2);
    }
}
