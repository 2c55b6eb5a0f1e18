mod common;

use common::{all_op_errors, model_gradient_error, FD_TOL};

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..10 {
        for (op, err) in all_op_errors(seed) {
            assert!(err <= FD_TOL, "{} at seed {}: relative error {:e}", op, seed, err);
        }
    }
}

#[test]
fn full_model_loss_matches_central_differences() {
    for seed in 0..10 {
        let err = model_gradient_error(seed);
        assert!(err <= FD_TOL, "seed {}: relative error {:e}", seed, err);
    }
}
