use proptest::prelude::*;
use velo_core::features::{clip_log, per_param_features, progress_features, PARAM_FEATURES};
use velo_core::numkit::RngKey;
use velo_core::opt_state::TensorAccumulators;

proptest! {
    #[test]
    fn progress_is_bounded_and_monotone(total in 1u64..100_000, a in 0u64..200_000, b in 0u64..200_000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let (fl, fh) = (progress_features(lo, total), progress_features(hi, total));
        for (x, y) in fl.iter().zip(&fh) {
            prop_assert!((-1.0..=1.0).contains(x));
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn clip_log_is_bounded_even_and_monotone(x in -1e12f64..1e12, y in -1e12f64..1e12) {
        prop_assert!((-5.0..=5.0).contains(&clip_log(x)));
        prop_assert_eq!(clip_log(x), clip_log(-x));
        if x.abs() <= y.abs() {
            prop_assert!(clip_log(x) <= clip_log(y));
        }
    }

    #[test]
    fn normalized_columns_have_unit_or_zero_rms(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), scale in -8i32..8) {
        let mut g = RngKey::new(seed).generator();
        let mut acc = TensorAccumulators::zeros(&[rows, cols]);
        let n = acc.len();
        let s = 10f64.powi(scale);
        for _ in 0..3 {
            let grad: Vec<f64> = (0..n).map(|_| s * g.normal()).collect();
            acc.update(&grad);
        }
        let params: Vec<f64> = (0..n).map(|_| g.normal()).collect();
        let grads: Vec<f64> = (0..n).map(|_| s * g.normal()).collect();
        let f = per_param_features(&params, &grads, &acc);
        for k in 0..PARAM_FEATURES {
            let col = f.column(k);
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            prop_assert!(rms == 0.0 || (rms - 1.0).abs() < 1e-12, "column {} rms {}", k, rms);
        }
    }
}
