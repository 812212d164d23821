mod common;

use common::grad;

#[test]
fn target_loss_matches_finite_differences() {
    grad::target(1000).unwrap();
}

#[test]
fn negative_loss_matches_finite_differences() {
    grad::negative(1000).unwrap();
}

#[test]
fn positive_loss_matches_finite_differences() {
    grad::positive(1000).unwrap();
}

#[test]
fn soft_target_loss_matches_finite_differences() {
    grad::soft_target(1000).unwrap();
}

#[test]
fn mask_loss_matches_finite_differences() {
    grad::mask(1000).unwrap();
}

#[test]
fn model_backward_matches_finite_differences() {
    grad::model_backward(1000).unwrap();
}

#[test]
fn end_to_end_batch_gradient() {
    grad::end_to_end(200).unwrap();
}
