//! Finite-difference oracle for the input-row gradient.

mod common;

#[test]
fn input_gradient_matches_central_differences() {
    for (layer, worst) in common::max_gradient_error(17) {
        assert!(worst < 1e-3, "layer {layer}: max relative error {worst}");
    }
}
