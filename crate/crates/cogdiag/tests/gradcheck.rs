mod common;

use std::time::Instant;

#[test]
fn every_op_matches_finite_differences() {
    common::check_op_gradients().unwrap();
}

#[test]
fn composed_model_matches_finite_differences() {
    let start = Instant::now();
    common::check_model_gradients().unwrap();
    assert!(start.elapsed().as_secs_f64() < 30.0, "took {:?}", start.elapsed());
}
