use proptest::prelude::*;
use velo_core::eval_harness::{fit_timing, percentile, speedup, BaselineEnvelope};
use velo_core::numkit::RngKey;

fn envelope(drops: &[f64]) -> BaselineEnvelope {
    let mut loss = Vec::with_capacity(drops.len());
    let mut l = 10.0;
    for d in drops {
        l -= d;
        loss.push(l);
    }
    BaselineEnvelope {
        task_id: "t".into(),
        steps: (1..=drops.len() as u64).collect(),
        loss,
    }
}

/// Linear-interpolation percentile computed by rank position.
fn oracle_percentile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q / 100.0;
    let i = h as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] + (h - i as f64) * (s[i + 1] - s[i])
}

proptest! {
    #[test]
    fn lower_target_loss_never_lowers_speedup(
        drops in prop::collection::vec(0.0f64..0.1, 20..200),
        a in 0.0f64..12.0,
        b in 0.0f64..12.0,
        steps in 1u64..20,
    ) {
        let env = envelope(&drops);
        let (lo, hi) = (a.min(b), a.max(b));
        let s_lo = speedup(lo, steps, &env).unwrap();
        let s_hi = speedup(hi, steps, &env).unwrap();
        prop_assert!(s_lo.value >= s_hi.value, "{:?} vs {:?}", s_lo, s_hi);
    }

    #[test]
    fn percentile_matches_rank_oracle(xs in prop::collection::vec(-100.0f64..100.0, 1..40), q in 0.0f64..=100.0) {
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let got = percentile(&sorted, q);
        let want = oracle_percentile(&xs, q);
        prop_assert!((got - want).abs() <= 1e-9, "{} vs {}", got, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn timing_fit_tolerates_multiplicative_noise(log_p in -10.0f64..-7.0, crossover in 3.0f64..6.0, seed in any::<u64>()) {
        // Keep the overhead/per-parameter crossover inside the measured range.
        let p = 10f64.powf(log_p);
        let o = p * 10f64.powf(crossover);
        let mut g = RngKey::new(seed).generator();
        let data: Vec<(f64, f64)> = (0..=40)
            .flat_map(|i| std::iter::repeat_n(10f64.powf(2.0 + i as f64 / 8.0), 6))
            .map(|n| (n, (o + p * n) * (1.0 + 0.1 * g.normal()).max(0.5)))
            .collect();
        let fit = fit_timing(&data).unwrap();
        prop_assert!((fit.lambda_overhead / o - 1.0).abs() < 0.1, "{:?}", fit);
        prop_assert!((fit.lambda_params / p - 1.0).abs() < 0.1, "{:?}", fit);
    }
}
