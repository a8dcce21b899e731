//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pdmp_core::affine::{build_map, TransformedPotential};
use pdmp_core::gp::{log_marginal_likelihood, FitOptions, GpDataset, GpHyperparams, GpModel};
use pdmp_core::pdmp::{bps_run, zigzag_run, PdmpOptions, Skeleton};
use pdmp_core::problem::{forward_displacement, generate_synthetic, project_prior, BarPosterior, PriorSpec};
use pdmp_core::surrogate::Surrogate;
use pdmp_core::{GaussianPotential, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Central differences of a scalar function, step scaled per coordinate.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, rel_step: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let h = rel_step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central differences of a vector function; column `i` is `∂f/∂x_i`.
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, rel_step: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, n);
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        j.set_column(i, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// `‖a − b‖∞ / ‖b‖∞`, with a tiny floor so an exact zero reference stays meaningful.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-12);
    diff / scale
}

/// Adaptive Simpson on a function that may have jumps; tolerance is absolute.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let err = left + right - whole;
        if depth >= 60 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 0)
}

/// A d=3 bar posterior on synthetic data.
pub fn bar_posterior(d: usize, seed: u64) -> BarPosterior {
    let spec = PriorSpec::new(d);
    let problem = generate_synthetic(&spec, seed).unwrap();
    BarPosterior::from_synthetic(&problem, &spec).unwrap()
}

/// Worst relative finite-difference error for each derivative routine over `n` random points.
pub fn derivative_oracle(n: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let d = 3;
    let post = bar_posterior(d, seed);
    let map = std::sync::Arc::new(build_map(&post.fresh(), &post.prior().mean).unwrap());
    let tp = TransformedPotential::new(post.fresh(), map).unwrap();

    let (gp, gp_grad) = (small_gp(false, seed), small_gp(true, seed));
    let mut worst = [0.0f64; 7];
    for _ in 0..n {
        let theta = &post.prior().mean + post.prior().chol.clone() * normal_vec(&mut r, d, 0.5);
        let g = post.gradient(&theta).unwrap();
        let fd = fd_gradient(|x| post.value(x).unwrap(), &theta, 1e-5);
        worst[0] = worst[0].max(rel_err(g.as_slice(), fd.as_slice()));

        let h = post.hessian(&theta).unwrap();
        let fdh = fd_jacobian(|x| post.gradient(x).unwrap(), &theta, 1e-5);
        worst[1] = worst[1].max(rel_err(h.as_slice(), fdh.as_slice()));

        let xi = normal_vec(&mut r, d, 1.0);
        let tg = tp.gradient(&xi).unwrap();
        let fd = fd_gradient(|x| tp.value(x).unwrap(), &xi, 1e-5);
        worst[2] = worst[2].max(rel_err(tg.as_slice(), fd.as_slice()));
        let th = tp.hessian(&xi).unwrap();
        let fdh = fd_jacobian(|x| tp.gradient(x).unwrap(), &xi, 1e-5);
        worst[3] = worst[3].max(rel_err(th.as_slice(), fdh.as_slice()));

        let q = normal_vec(&mut r, 2, 1.0);
        for (k, model) in [(4, &gp), (5, &gp_grad)] {
            let mg = model.predict_mean_grad(&q).unwrap();
            // The mean sums large cancelling terms when σ_f² is big, so a smaller step
            // would measure round-off rather than the derivative.
            let fd = fd_gradient(|x| model.predict_mean(x).unwrap(), &q, 1e-4);
            worst[k] = worst[k].max(rel_err(mg.as_slice(), fd.as_slice()));
        }

        // LML gradient in the natural parameters [m, σ_f², ℓ_1, ℓ_2, σ_n²].
        let with_grad = r.gen::<bool>();
        let ds = gp_grad.dataset();
        let p = DVector::from_vec(vec![
            r.gen_range(-1.0..1.0),
            r.gen_range(0.5..2.0),
            r.gen_range(0.5..2.0),
            r.gen_range(0.5..2.0),
            r.gen_range(1e-3..1e-1),
        ]);
        let hp = |p: &DVector<f64>| GpHyperparams::new(p[0], p[1], vec![p[2], p[3]], p[4]).unwrap();
        let (_, lg) = log_marginal_likelihood(ds, &hp(&p), with_grad).unwrap();
        let fd = DVector::from_fn(p.len(), |i, _| {
            let h = 1e-6 * p[i].abs().max(1e-3);
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[i] += h;
            pm[i] -= h;
            let f = |p: &DVector<f64>| log_marginal_likelihood(ds, &hp(p), with_grad).unwrap().0;
            (f(&pp) - f(&pm)) / (2.0 * h)
        });
        worst[6] = worst[6].max(rel_err(lg.as_slice(), fd.as_slice()));
    }
    vec![
        ("potential gradient", worst[0]),
        ("potential hessian", worst[1]),
        ("whitened gradient", worst[2]),
        ("whitened hessian", worst[3]),
        ("gp mean gradient", worst[4]),
        ("gp mean gradient (derivative data)", worst[5]),
        ("lml gradient", worst[6]),
    ]
}

/// GP fitted to a smooth 2-d test function, optionally with gradient observations.
pub fn small_gp(with_grad: bool, seed: u64) -> GpModel {
    let mut r = rng(seed ^ 0xa11ce);
    let f = |x: &DVector<f64>| (x[0]).sin() + 0.5 * x[1] * x[1] + 0.3 * x[0] * x[1];
    let df = |x: &DVector<f64>| DVector::from_vec(vec![x[0].cos() + 0.3 * x[1], x[1] + 0.3 * x[0]]);
    let xs: Vec<DVector<f64>> = (0..20).map(|_| normal_vec(&mut r, 2, 1.5)).collect();
    let ys = xs.iter().map(f).collect();
    let gs = xs.iter().map(df).collect();
    let ds = GpDataset::new(xs, ys, Some(gs)).unwrap();
    let init = GpHyperparams::isotropic(2, 1.0, 1.0, 1e-6);
    GpModel::fit(ds, &init, with_grad, &FitOptions { seed, ..FitOptions::default() }).unwrap()
}

/// Worst error of the closed-form displacement against quadrature of `∫_0^x e^{−θ(s)} ds`.
pub fn forward_oracle(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let d = r.gen_range(1..=8);
        let theta = normal_vec(&mut r, d, 1.0);
        let x: f64 = r.gen_range(0.0..=1.0);
        let inv_e = |s: f64| {
            let k = ((s * d as f64).floor() as usize).min(d - 1);
            (-theta[k]).exp()
        };
        let q = adaptive_simpson(&inv_e, 0.0, x, 1e-12);
        worst = worst.max((forward_displacement(&theta, x).unwrap() - q).abs());
    }
    worst
}

/// Worst error of the projected prior covariance against a trapezoid rule on each cell pair.
pub fn prior_covariance_oracle(d: usize, length_scale: f64, grid: usize) -> f64 {
    let spec = PriorSpec {
        length_scale,
        ..PriorSpec::new(d)
    };
    let prior = project_prior(&spec).unwrap();
    let h = 1.0 / d as f64;
    let step = h / grid as f64;
    let w = |k: usize| if k == 0 || k == grid { 0.5 } else { 1.0 };
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for a in 0..=grid {
                let x = i as f64 * h + a as f64 * step;
                let mut row = 0.0;
                for b in 0..=grid {
                    let y = j as f64 * h + b as f64 * step;
                    let r = x - y;
                    row += w(b) * (-(r * r) / (2.0 * length_scale * length_scale)).exp();
                }
                s += w(a) * row;
            }
            let q = (d * d) as f64 * spec.signal_std.powi(2) * s * step * step;
            worst = worst.max((prior.covariance[(i, j)] - q).abs());
        }
    }
    worst
}

/// Random skeletons from short Zig-Zag and BPS runs on correlated Gaussians.
pub fn random_skeletons(n: usize, seed: u64) -> Vec<Skeleton> {
    let mut r = rng(seed);
    (0..n)
        .map(|k| {
            let d = r.gen_range(1..=4);
            let a = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
            let prec = &a * a.transpose() + DMatrix::identity(d, d);
            let target = GaussianPotential::new(normal_vec(&mut r, d, 1.0), prec).unwrap();
            let map = std::sync::Arc::new(pdmp_core::affine::AffineMap::identity(d));
            let tp = TransformedPotential::new(target, map).unwrap();
            let mut s = Surrogate::laplace_with_const(d, 0.0);
            let x0 = normal_vec(&mut r, d, 1.0);
            let opts = PdmpOptions::new(r.gen_range(5.0..50.0), 0.02, seed + k as u64);
            if k % 2 == 0 {
                zigzag_run(&tp, &mut s, &x0, &opts).unwrap()
            } else {
                bps_run(&tp, &mut s, &x0, &opts).unwrap()
            }
        })
        .collect()
}

/// Worst relative error of closed-form skeleton moments against a midpoint rule.
pub fn skeleton_moment_oracle(skeletons: &[Skeleton], points: usize) -> f64 {
    let mut worst = 0.0f64;
    for sk in skeletons {
        let d = sk.dim();
        let (m, v) = sk.moments(0.0).unwrap();
        let dt = sk.final_time / points as f64;
        let mut s1 = DVector::zeros(d);
        let mut s2 = DVector::zeros(d);
        for k in 0..points {
            let x = sk.position_at((k as f64 + 0.5) * dt);
            s1 += &x;
            s2 += x.component_mul(&x);
        }
        let qm = s1 / points as f64;
        let qv = s2 / points as f64 - qm.component_mul(&qm);
        worst = worst.max(rel_err(m.as_slice(), qm.as_slice())).max(rel_err(v.as_slice(), qv.as_slice()));
    }
    worst
}

/// AR(1) chain `x_{k+1} = φ x_k + sqrt(1−φ²) z`, started in stationarity.
pub fn ar1(n: usize, phi: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut r = rng(seed);
    let mut x: f64 = r.sample(StandardNormal);
    let s = (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|_| {
            let out = DVector::from_element(1, x);
            x = phi * x + s * r.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}

pub fn gaussian_cloud(n: usize, d: usize, shift: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| normal_vec(&mut r, d, 1.0).add_scalar(shift)).collect()
}
