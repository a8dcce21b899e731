mod common;

use common::*;

#[test]
fn derivatives_match_central_differences() {
    for (name, err) in derivative_oracle(20, 7) {
        assert!(err <= 1e-5, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn displacement_matches_quadrature() {
    let err = forward_oracle(100, 11);
    assert!(err <= 1e-8, "worst abs error {err:.3e}");
}

#[test]
fn prior_covariance_matches_quadrature() {
    let err = prior_covariance_oracle(1, 0.3, 2000);
    assert!(err <= 1e-6, "d = 1: {err:.3e}");
    let err = prior_covariance_oracle(3, 0.3, 1000);
    assert!(err <= 1e-6, "d = 3: {err:.3e}");
}

#[test]
fn skeleton_moments_match_discretization() {
    let sks = random_skeletons(10, 3);
    assert!(sks.iter().all(|s| s.events.len() > 2));
    let err = skeleton_moment_oracle(&sks, 1_000_000);
    assert!(err <= 1e-5, "worst relative error {err:.3e}");
}
