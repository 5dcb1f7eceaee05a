mod common;

use anomaly_elbo::vae::{init_params, VaeConfig};
use proptest::prelude::*;

fn case() -> impl Strategy<Value = (VaeConfig, Vec<f64>, Vec<f64>)> {
    (1usize..=32, 1usize..=8, 1usize..=4, -1.0f64..1.5, any::<u64>()).prop_flat_map(|(d, h, l, log_c, seed)| {
        let config = VaeConfig {
            input_dim: d,
            hidden_dim: h,
            latent_dim: l,
            c: f64::exp(log_c),
            seed,
        };
        (
            Just(config),
            prop::collection::vec(0.0f64..=1.0, d),
            prop::collection::vec(-2.0f64..2.0, l),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn tape_gradients_match_finite_differences((config, x, eps) in case()) {
        let params = init_params(&config).unwrap();
        prop_assume!(common::grad::relu_margin(&params, &x, &eps) > common::grad::MIN_RELU_MARGIN);
        let err = common::grad::max_error(&params, &x, &eps, config.c).unwrap();
        prop_assert!(err < common::grad::TOLERANCE, "relative error {err:e} for {config:?}");
    }
}
