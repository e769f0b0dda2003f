use proptest::prelude::*;
use velo_core::baselines::{baseline_step, BaselineKind, BaselineSpec, BaselineState};
use velo_core::numkit::{RngKey, Tensor};
use velo_core::opt_state::{Factored, TensorAccumulators, FACTORED_DECAYS};
use velo_core::task_zoo::ParamShape;

proptest! {
    #[test]
    fn adam_is_invariant_to_gradient_scale(seed in any::<u64>(), log_c in -3.0f64..3.0) {
        let c = 10f64.powf(log_c);
        let shapes = vec![ParamShape::new("w", vec![6], 6)];
        let mut spec = BaselineSpec::new(BaselineKind::Adam, 1e-2);
        spec.eps = 1e-300;
        let mut g = RngKey::new(seed).generator();
        let x0: Vec<f64> = (0..6).map(|_| g.normal()).collect();
        let (mut a, mut b) = (vec![Tensor::vector(x0.clone())], vec![Tensor::vector(x0)]);
        let (mut sa, mut sb) = (BaselineState::new(spec.kind, &shapes), BaselineState::new(spec.kind, &shapes));
        for _ in 0..20 {
            let grad: Vec<f64> = (0..6).map(|_| g.normal() + 0.1).collect();
            baseline_step(&spec, &mut a, &[Tensor::vector(grad.clone())], &mut sa, 20).unwrap();
            let scaled: Vec<f64> = grad.iter().map(|v| c * v).collect();
            baseline_step(&spec, &mut b, &[Tensor::vector(scaled)], &mut sb, 20).unwrap();
        }
        for (x, y) in a[0].data().iter().zip(b[0].data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn factored_moments_are_emas_of_row_and_column_means(rows in 2usize..6, cols in 2usize..6, seed in any::<u64>()) {
        let mut acc = TensorAccumulators::zeros(&[rows, cols]);
        let mut g = RngKey::new(seed).generator();
        let mut row_ema = vec![vec![0.0; rows]; 3];
        let mut col_ema = vec![vec![0.0; cols]; 3];
        for _ in 0..5 {
            let grad: Vec<f64> = (0..rows * cols).map(|_| g.normal()).collect();
            acc.update(&grad);
            for (k, &beta) in FACTORED_DECAYS.iter().enumerate() {
                for i in 0..rows {
                    let m = (0..cols).map(|j| grad[i * cols + j].powi(2)).sum::<f64>() / cols as f64;
                    row_ema[k][i] = beta * row_ema[k][i] + (1.0 - beta) * m;
                }
                for j in 0..cols {
                    let m = (0..rows).map(|i| grad[i * cols + j].powi(2)).sum::<f64>() / rows as f64;
                    col_ema[k][j] = beta * col_ema[k][j] + (1.0 - beta) * m;
                }
            }
        }
        let Factored::RowCol { row_ema: r, col_ema: c, .. } = &acc.factored else {
            panic!("rank-2 tensors are factored");
        };
        for k in 0..3 {
            for (x, y) in r[k].iter().zip(&row_ema[k]).chain(c[k].iter().zip(&col_ema[k])) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
