use proptest::prelude::*;
use velo_core::meta_es::{aggregate, es_estimate, unit_normalize, MetaGradient, MetaObjective, PenaltyTracker};
use velo_core::numkit::RngKey;

struct Linear(Vec<f64>);

impl MetaObjective for Linear {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn family(&self) -> String {
        "linear".into()
    }
    fn task_id(&self) -> String {
        "linear".into()
    }
    fn evaluate(&self, theta: &[f64], _key: RngKey, _n: u64) -> f64 {
        theta.iter().zip(&self.0).map(|(a, b)| a * b).sum()
    }
}

fn grad(v: Vec<f64>, skipped: bool) -> MetaGradient {
    MetaGradient {
        theta_version: 0,
        grad: v,
        task_id: String::new(),
        inner_steps: 1,
        raw_meta_loss: 0.0,
        monitor_loss: None,
        wall_time_s: 0.0,
        skipped,
    }
}

#[test]
fn es_direction_converges_on_a_linear_objective() {
    let mut g = RngKey::new(3).generator();
    let a: Vec<f64> = (0..16).map(|_| g.normal()).collect();
    let theta = vec![0.3; 16];
    let est = es_estimate(&Linear(a.clone()), &theta, RngKey::new(4), 1, 0.05, 4000, &PenaltyTracker::new()).unwrap();
    let dot: f64 = est.grad.iter().zip(&a).map(|(x, y)| x * y).sum();
    let cos = dot / (est.grad.iter().map(|x| x * x).sum::<f64>().sqrt() * a.iter().map(|x| x * x).sum::<f64>().sqrt());
    // Expected squared angle error is about d / pairs.
    assert!(cos > 0.99, "{cos}");
}

proptest! {
    #[test]
    fn unit_normalize_gives_unit_norm(v in prop::collection::vec(-1e6f64..1e6, 1..32)) {
        let mut w = v.clone();
        let n = unit_normalize(&mut w);
        if n > 0.0 {
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(w.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn skipped_gradients_and_order_do_not_change_the_aggregate(
        vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..8),
        skips in prop::collection::vec(0usize..9, 0..6),
        rot in 0usize..8,
    ) {
        let b = vs.len();
        let plain: Vec<MetaGradient> = vs.iter().map(|v| grad(v.clone(), false)).collect();
        let base = aggregate(&plain, b).unwrap();
        let mut mixed = plain.clone();
        mixed.rotate_left(rot % b);
        for &s in &skips {
            let at = s.min(mixed.len());
            mixed.insert(at, grad(vec![9.0; 4], true));
        }
        let other = aggregate(&mixed, b).unwrap();
        for (x, y) in base.iter().zip(&other) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(aggregate(&plain, b + 1).is_err());
    }
}
