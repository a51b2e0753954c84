mod common;

use common::{layer_gradient_errors, FD_TOLERANCE};

#[test]
fn every_layer_matches_finite_differences() {
    for seed in [3, 17, 101] {
        for (layer, err) in layer_gradient_errors(seed) {
            assert!(
                err <= FD_TOLERANCE,
                "seed {seed}: {layer} relative error {err:e}"
            );
        }
    }
}

#[test]
fn oracle_detects_a_wrong_gradient() {
    let numeric = common::central_diff(|v| v[0] * v[0] * v[1], &[1.5, -2.0], 1e-5);
    assert!(common::rel_error(&[-6.0, 2.25], &numeric) < 1e-8);
    assert!(common::rel_error(&[-6.0, 2.0], &numeric) > 1e-2);
}

#[test]
fn whole_forecaster_matches_finite_differences() {
    for seed in [5, 23] {
        let err = common::forecaster_gradient_error(seed);
        assert!(err <= FD_TOLERANCE, "seed {seed}: relative error {err:e}");
    }
}
