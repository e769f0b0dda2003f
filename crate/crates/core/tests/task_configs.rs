use proptest::prelude::*;
use velo_core::numkit::RngKey;
use velo_core::task_zoo::{
    canonicalize, emit_config, parse_config, sample_task_with, Family, Problem, RunContext, SamplerOptions, Task,
};

const WEIGHTS: [(Family, f64); 3] = [(Family::ImageMlp, 1.0), (Family::ImageMlpAe, 1.0), (Family::TinyByteLm, 1.0)];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_configs_round_trip_through_text(seed in any::<u64>()) {
        let cfg = sample_task_with(RngKey::new(seed), &WEIGHTS, f64::INFINITY, &SamplerOptions::default())
            .unwrap()
            .config;
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.task_id(), cfg.task_id());
        prop_assert_eq!(canonicalize(&text).unwrap(), text);
    }

    #[test]
    fn sampled_tasks_give_finite_losses_and_shaped_gradients(seed in any::<u64>()) {
        let cfg = sample_task_with(RngKey::new(seed), &WEIGHTS, f64::INFINITY, &SamplerOptions::default())
            .unwrap()
            .config;
        let task = Task::from_config(&cfg).unwrap();
        let params = task.init_params(RngKey::new(seed ^ 1));
        prop_assert!(params.iter().all(|p| p.is_finite()));
        let (loss, grads) = task.loss_and_grad(&params, RngKey::new(seed ^ 2), &mut RunContext::new()).unwrap();
        prop_assert!(loss.is_finite(), "{}", emit_config(&cfg));
        prop_assert_eq!(grads.len(), task.param_shapes().len());
        for (g, s) in grads.iter().zip(task.param_shapes()) {
            prop_assert_eq!(g.shape(), &s.shape[..]);
            prop_assert!(g.is_finite());
        }
    }
}
