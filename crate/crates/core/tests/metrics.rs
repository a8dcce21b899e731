mod common;

use std::sync::Arc;

use common::*;
use nalgebra::DVector;
use pdmp_core::affine::{AffineMap, TransformedPotential};
use pdmp_core::metrics::{build_reference, ess, rmse_mean, sinkhorn_divergence, ReferencePosterior, SinkhornOptions};
use pdmp_core::GaussianPotential;

#[test]
fn ess_of_independent_draws() {
    let xs = gaussian_cloud(100_000, 1, 0.0, 1);
    let r = ess(&xs).unwrap().min / xs.len() as f64;
    assert!((0.8..=1.2).contains(&r), "{r}");
}

#[test]
fn ess_of_ar1_chain() {
    let xs = ar1(100_000, 0.5, 2);
    let r = ess(&xs).unwrap().min / xs.len() as f64;
    assert!((r * 3.0 - 1.0).abs() <= 0.25, "{r}");
}

#[test]
fn ess_of_repeated_pairs() {
    let base = gaussian_cloud(20_000, 1, 0.0, 3);
    let xs: Vec<DVector<f64>> = base.iter().flat_map(|x| [x.clone(), x.clone()]).collect();
    let e = ess(&xs).unwrap().min;
    let half = xs.len() as f64 / 2.0;
    assert!((e / half - 1.0).abs() <= 0.25, "{e}");
}

#[test]
fn ess_is_minimum_over_coordinates() {
    let a = gaussian_cloud(5000, 1, 0.0, 4);
    let b = ar1(5000, 0.9, 5);
    let xs: Vec<DVector<f64>> = a.iter().zip(&b).map(|(x, y)| DVector::from_vec(vec![x[0], y[0]])).collect();
    let r = ess(&xs).unwrap();
    assert_eq!(r.min, r.per_coordinate[1]);
    assert!(r.per_coordinate[0] > r.per_coordinate[1]);
    assert!(r.per_coordinate.iter().all(|&e| (1.0..=5000.0).contains(&e)));
}

#[test]
fn sinkhorn_self_distance_vanishes() {
    let xs = gaussian_cloud(500, 2, 0.0, 6);
    let s = sinkhorn_divergence(&xs, &xs, 0.02, &SinkhornOptions::default()).unwrap();
    assert!(s.abs() <= 1e-6, "{s}");
}

#[test]
fn sinkhorn_tracks_gaussian_shift() {
    // Smaller clouds than the acceptance check; the estimator bias grows, so the band is wider.
    let a = gaussian_cloud(2000, 1, 0.0, 7);
    let b = gaussian_cloud(2000, 1, 1.0, 8);
    let s = sinkhorn_divergence(&a, &b, 0.02, &SinkhornOptions::default()).unwrap();
    assert!((s - 1.0).abs() <= 0.25, "{s}");
}

#[test]
fn sinkhorn_rejects_bad_input() {
    let a = gaussian_cloud(10, 2, 0.0, 1);
    let b = gaussian_cloud(10, 3, 0.0, 1);
    let opts = SinkhornOptions::default();
    assert!(sinkhorn_divergence(&a, &b, 0.02, &opts).is_err());
    assert!(sinkhorn_divergence(&a, &[], 0.02, &opts).is_err());
    assert!(sinkhorn_divergence(&a, &a, 0.0, &opts).is_err());
}

#[test]
fn reference_on_gaussian_and_round_trip() {
    let tp = TransformedPotential::new(GaussianPotential::standard(2), Arc::new(AffineMap::identity(2))).unwrap();
    let r = build_reference(&tp, 200_000, 1).unwrap();
    assert_eq!(r.samples.len(), 195_000);
    assert!(rmse_mean(&r.mean, &DVector::zeros(2)).unwrap() < 0.05);
    assert!(r.variances.add_scalar(-1.0).amax() < 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.json");
    r.save(&path).unwrap();
    assert_eq!(ReferencePosterior::load(&path).unwrap(), r);

    let mut bad = r.clone();
    bad.mean[0] += 1e-6;
    bad.save(&path).unwrap();
    assert!(ReferencePosterior::load(&path).is_err());
    assert!(build_reference(&tp, 50_000, 1).is_err());
}
