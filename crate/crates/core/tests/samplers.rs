mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector};
use pdmp_core::affine::{AffineMap, TransformedPotential};
use pdmp_core::pdmp::{bps_run, zigzag_run, EventKind, PdmpOptions};
use pdmp_core::surrogate::Surrogate;
use pdmp_core::{GaussianPotential, Potential};

fn standard(d: usize) -> TransformedPotential<GaussianPotential> {
    TransformedPotential::new(GaussianPotential::standard(d), Arc::new(AffineMap::identity(d))).unwrap()
}

fn correlated(d: usize, seed: u64) -> TransformedPotential<GaussianPotential> {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(d, d, |_, _| normal_vec(&mut r, 1, 0.5)[0]);
    let prec = &a * a.transpose() + DMatrix::identity(d, d);
    TransformedPotential::new(GaussianPotential::new(DVector::zeros(d), prec).unwrap(), Arc::new(AffineMap::identity(d))).unwrap()
}

#[test]
fn exact_surrogate_never_corrects() {
    let tp = standard(2);
    let x0 = DVector::from_vec(vec![0.3, -0.7]);
    let opts = PdmpOptions::new(1e3, 0.02, 1);
    for bps in [false, true] {
        let mut s = Surrogate::laplace(&tp).unwrap();
        let sk = if bps { bps_run(&tp, &mut s, &x0, &opts) } else { zigzag_run(&tp, &mut s, &x0, &opts) }.unwrap();
        assert_eq!(sk.stats.corrections, 0);
        assert!(sk.stats.candidates > 100);
        assert_eq!(sk.stats.accepted, sk.stats.candidates, "bps = {bps}");
        assert_eq!(sk.stats.max_ratio, 1.0);
        assert!(sk.stats.aborted.is_none());
        assert_eq!(sk.final_time, 1e3);
    }
}

#[test]
fn zigzag_skeleton_invariants() {
    let tp = correlated(3, 2);
    let mut s = Surrogate::constant(3);
    let sk = zigzag_run(&tp, &mut s, &DVector::zeros(3), &PdmpOptions::new(200.0, 0.02, 5)).unwrap();
    assert!(sk.stats.corrections > 0);
    assert!(sk.stats.max_ratio <= 1.0);
    for w in sk.events.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let drift = &a.position + &a.velocity * (b.time - a.time);
        assert!((drift - &b.position).amax() <= 1e-10);
        let EventKind::Flip(i) = b.kind else { panic!("unexpected event {:?}", b.kind) };
        for k in 0..3 {
            let flipped = b.velocity[k] == -a.velocity[k];
            assert_eq!(flipped, k == i);
            assert_eq!(b.velocity[k].abs(), 1.0);
        }
    }
}

#[test]
fn bps_reflection_invariants() {
    let tp = correlated(3, 4);
    let mut s = Surrogate::laplace_with_const(3, 0.0);
    let mut opts = PdmpOptions::new(300.0, 0.02, 9);
    opts.lambda_ref = 0.5;
    let sk = bps_run(&tp, &mut s, &DVector::from_element(3, 0.5), &opts).unwrap();
    assert!(sk.stats.refreshes > 0);
    let mut bounces = 0;
    for w in sk.events.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let drift = &a.position + &a.velocity * (b.time - a.time);
        assert!((drift - &b.position).amax() <= 1e-10);
        if b.kind == EventKind::Bounce {
            bounces += 1;
            let g = tp.gradient(&b.position).unwrap();
            assert!((b.velocity.dot(&g) + a.velocity.dot(&g)).abs() <= 1e-8);
            assert!((b.velocity.norm() - a.velocity.norm()).abs() <= 1e-10);
        }
    }
    assert!(bounces > 10);
    let slopes: Vec<f64> = sk.events.iter().map(|e| e.velocity[0] / e.velocity[1]).collect();
    assert!(slopes.iter().any(|s| (s.abs() - 1.0).abs() > 1e-3));
}

#[test]
fn evaluation_budget_stops_the_run() {
    let tp = correlated(2, 6);
    let mut s = Surrogate::constant(2);
    let mut opts = PdmpOptions::new(f64::INFINITY, 0.02, 3);
    opts.max_evaluations = Some(300);
    let sk = zigzag_run(&tp, &mut s, &DVector::zeros(2), &opts).unwrap();
    assert_eq!(tp.evaluations(), 300);
    assert!(sk.final_time.is_finite() && sk.final_time > 0.0);
    assert!(sk.cost_trace.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
}

#[test]
fn same_seed_same_skeleton() {
    for bps in [false, true] {
        let run = || {
            let tp = correlated(2, 8);
            let mut s = Surrogate::gp(&tp, 20, false, 1).unwrap();
            let opts = PdmpOptions::new(50.0, 0.02, 42);
            if bps { bps_run(&tp, &mut s, &DVector::zeros(2), &opts) } else { zigzag_run(&tp, &mut s, &DVector::zeros(2), &opts) }.unwrap()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn zigzag_recovers_standard_gaussian() {
    let tp = standard(2);
    let mut s = Surrogate::laplace(&tp).unwrap();
    let sk = zigzag_run(&tp, &mut s, &DVector::zeros(2), &PdmpOptions::new(1e4, 0.02, 3)).unwrap();
    let (m, v) = sk.moments(0.0).unwrap();
    assert!(m.amax() <= 0.05, "{m}");
    assert!(v.add_scalar(-1.0).amax() <= 0.1, "{v}");
}
