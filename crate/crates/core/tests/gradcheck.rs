mod common;

use common::{op_max_rel_error, GRAD_TOL, OPS};
use misgan_lab::autodiff::Graph;
use misgan_lab::tensor::{temperature_sigmoid, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_matches_central_differences(seed in any::<u64>()) {
        for op in OPS {
            let err = op_max_rel_error(op, seed);
            prop_assert!(err < GRAD_TOL, "{op}: relative error {err:e} at seed {seed}");
        }
    }

    #[test]
    fn sigmoid_derivative_has_closed_form(x in -6.0f64..6.0, lambda in 0.1f64..2.0) {
        let mut g = Graph::new();
        let xi = g.leaf(Tensor::scalar(x));
        let y = g.temperature_sigmoid(xi, lambda);
        let grads = g.backward(y).unwrap();
        let s = temperature_sigmoid(x, lambda);
        let expected = s * (1.0 - s) / lambda;
        let got = grads.get(xi).unwrap().item();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1e-300), "{got} vs {expected}");
    }

    #[test]
    fn saturated_sigmoid_is_near_binary(x in prop_oneof![-30.0f64..-1.4501, 1.4501f64..30.0]) {
        let s = temperature_sigmoid(x, 0.66);
        prop_assert!((s - s.round()).abs() < 0.1);
        prop_assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn gradient_checks_are_deterministic() {
    for op in OPS {
        assert_eq!(
            op_max_rel_error(op, 7).to_bits(),
            op_max_rel_error(op, 7).to_bits(),
            "{op}"
        );
    }
}
