//! The 1D linear-elastic bar inverse problem.
//!
//! The log Young's modulus on `[0, 1]` is piecewise constant over `d` equal cells with
//! values `θ_1..θ_d`. With unit load the displacement is `u(x) = ∫_0^x exp(−θ(s)) ds`,
//! observed with Gaussian noise at `m = ⌊3d/4⌋` equidistant sensors. The prior on `θ` is a
//! squared-exponential Gaussian field projected onto the cells.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::potential::{EvalCounter, Potential};

pub const SIGMA_OBS: f64 = 0.025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean_field: f64,
    pub signal_std: f64,
    pub length_scale: f64,
    pub dimension: usize,
}

impl PriorSpec {
    pub fn new(dimension: usize) -> Self {
        Self {
            mean_field: 1.0,
            signal_std: 1.0,
            length_scale: 0.3,
            dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !(self.signal_std > 0.0 && self.signal_std.is_finite()) {
            return Err(Error::InvalidArgument("prior signal std must be positive".into()));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidArgument("prior length scale must be positive".into()));
        }
        if !self.mean_field.is_finite() {
            return Err(Error::InvalidArgument("prior mean must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedPrior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`.
    pub chol: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

impl ProjectedPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Second antiderivative of `exp(−r²/(2l²))` vanishing with its slope at 0.
fn se_antiderivative2(r: f64, l: f64) -> f64 {
    let z = r / (std::f64::consts::SQRT_2 * l);
    l * (std::f64::consts::PI / 2.0).sqrt() * r * libm::erf(z) + l * l * (-(r * r) / (2.0 * l * l)).exp_m1()
}

/// `∬_{[a,b]×[c,e]} exp(−(x−y)²/(2l²)) dx dy` in closed form.
pub fn se_cell_integral(a: f64, b: f64, c: f64, e: f64, l: f64) -> f64 {
    let g = |r: f64| se_antiderivative2(r, l);
    g(b - c) - g(a - c) - g(b - e) + g(a - e)
}

/// Project the squared-exponential prior field onto the piecewise-constant basis:
/// `Cov(θ_i, θ_j) = d² σ² ∬_{cell i × cell j} exp(−(x−x')²/(2l²))`.
pub fn project_prior(spec: &PriorSpec) -> Result<ProjectedPrior> {
    spec.validate()?;
    let d = spec.dimension;
    let h = 1.0 / d as f64;
    let s2 = spec.signal_std * spec.signal_std;
    let dd = (d * d) as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = dd
                * s2
                * se_cell_integral(i as f64 * h, (i + 1) as f64 * h, j as f64 * h, (j + 1) as f64 * h, spec.length_scale);
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite prior covariance entry".into()));
            }
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("projected prior covariance".into()))?;
    let precision = chol.inverse();
    let precision = (&precision + precision.transpose()) * 0.5;
    Ok(ProjectedPrior {
        mean: DVector::from_element(d, spec.mean_field),
        covariance: cov,
        chol: chol.l(),
        precision,
    })
}

/// Cell index holding the fractional term at `x`, and that term's length.
fn split(x: f64, d: usize) -> (usize, f64) {
    let k = ((x * d as f64).floor() as usize).min(d - 1);
    (k, x - k as f64 / d as f64)
}

/// `u(x; θ) = Σ_{i<k} (1/d) e^{−θ_i} + (x − k/d) e^{−θ_k}` with `k = ⌊xd⌋` (zero-based).
pub fn forward_displacement(theta: &DVector<f64>, x: f64) -> Result<f64> {
    if theta.is_empty() {
        return Err(Error::InvalidArgument("theta must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("location {x} outside [0, 1]")));
    }
    Ok(displacement(theta.as_slice(), x))
}

fn displacement(theta: &[f64], x: f64) -> f64 {
    let d = theta.len();
    let (k, frac) = split(x, d);
    let h = 1.0 / d as f64;
    let mut u = 0.0;
    for t in &theta[..k] {
        u += h * (-t).exp();
    }
    u + frac * (-theta[k]).exp()
}

/// Overlap of `[0, x]` with each cell.
fn overlaps(x: f64, d: usize) -> Vec<f64> {
    let (k, frac) = split(x, d);
    let h = 1.0 / d as f64;
    (0..d)
        .map(|i| match i.cmp(&k) {
            std::cmp::Ordering::Less => h,
            std::cmp::Ordering::Equal => frac,
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub sensor_locations: Vec<f64>,
    pub values: Vec<f64>,
    pub noise_std: f64,
}

impl Observations {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.sensor_locations.len(), self.values.len())?;
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument("observation noise std must be positive".into()));
        }
        if self.sensor_locations.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument("sensor outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// `m = ⌊3d/4⌋` sensors at `i/(m+1)`.
pub fn sensor_locations(d: usize) -> Vec<f64> {
    let m = 3 * d / 4;
    (1..=m).map(|i| i as f64 / (m + 1) as f64).collect()
}

/// Serialized synthetic problem so all samplers in a comparison consume identical data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub d: usize,
    pub seed: u64,
    pub theta_star: Vec<f64>,
    pub sensor_locations: Vec<f64>,
    pub observations: Vec<f64>,
    pub sigma_obs: f64,
}

impl SyntheticProblem {
    pub fn observations(&self) -> Observations {
        Observations {
            sensor_locations: self.sensor_locations.clone(),
            values: self.observations.clone(),
            noise_std: self.sigma_obs,
        }
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Draw `θ* ~ prior` and noisy sensor data with the default noise level.
pub fn generate_synthetic(spec: &PriorSpec, seed: u64) -> Result<SyntheticProblem> {
    generate_synthetic_with(spec, seed, SIGMA_OBS, true)
}

pub fn generate_synthetic_with(spec: &PriorSpec, seed: u64, sigma_obs: f64, add_noise: bool) -> Result<SyntheticProblem> {
    let prior = project_prior(spec)?;
    let d = spec.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    let theta = &prior.mean + &prior.chol * z;
    let sensors = sensor_locations(d);
    let observations = sensors
        .iter()
        .map(|&x| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            displacement(theta.as_slice(), x) + if add_noise { sigma_obs * eps } else { 0.0 }
        })
        .collect();
    Ok(SyntheticProblem {
        d,
        seed,
        theta_star: theta.iter().copied().collect(),
        sensor_locations: sensors,
        observations,
        sigma_obs,
    })
}

/// Posterior potential `½‖ũ − u(θ)‖²/σ² + ½(θ−μ)ᵀC⁻¹(θ−μ)`.
#[derive(Debug)]
pub struct BarPosterior {
    prior: ProjectedPrior,
    observations: Option<Observations>,
    counter: EvalCounter,
}

impl BarPosterior {
    pub fn new(prior: ProjectedPrior, observations: Observations) -> Result<Self> {
        observations.validate()?;
        Ok(Self {
            prior,
            observations: Some(observations),
            counter: EvalCounter::new(),
        })
    }

    /// Zero data weight: the potential is the prior quadratic alone.
    pub fn prior_only(prior: ProjectedPrior) -> Self {
        Self {
            prior,
            observations: None,
            counter: EvalCounter::new(),
        }
    }

    pub fn from_synthetic(problem: &SyntheticProblem, spec: &PriorSpec) -> Result<Self> {
        check_dim(spec.dimension, problem.d)?;
        Self::new(project_prior(spec)?, problem.observations())
    }

    pub fn prior(&self) -> &ProjectedPrior {
        &self.prior
    }

    pub fn observations(&self) -> Option<&Observations> {
        self.observations.as_ref()
    }

    /// Same posterior with a fresh evaluation counter.
    pub fn fresh(&self) -> Self {
        Self {
            prior: self.prior.clone(),
            observations: self.observations.clone(),
            counter: EvalCounter::new(),
        }
    }

    fn check(&self, theta: &DVector<f64>) -> Result<()> {
        check_dim(self.prior.dim(), theta.len())?;
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Residuals `u_k(θ) − ũ_k` and the sensor Jacobian (rows = sensors).
    fn residuals(&self, theta: &DVector<f64>) -> Option<(Vec<f64>, DMatrix<f64>, f64)> {
        let obs = self.observations.as_ref()?;
        let d = theta.len();
        let m = obs.sensor_locations.len();
        let mut r = vec![0.0; m];
        let mut jac = DMatrix::zeros(m, d);
        let inv_e: Vec<f64> = theta.iter().map(|t| (-t).exp()).collect();
        for (k, &x) in obs.sensor_locations.iter().enumerate() {
            let ov = overlaps(x, d);
            let mut u = 0.0;
            for i in 0..d {
                u += ov[i] * inv_e[i];
                jac[(k, i)] = -ov[i] * inv_e[i];
            }
            r[k] = u - obs.values[k];
        }
        Some((r, jac, obs.noise_std * obs.noise_std))
    }

    fn finite<T>(v: T, ok: bool) -> Result<T> {
        if ok {
            Ok(v)
        } else {
            Err(Error::Numeric("potential overflow at extreme parameter".into()))
        }
    }
}

impl Potential for BarPosterior {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.value_and_gradient(theta)?.0)
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.value_and_gradient(theta)?.1)
    }

    fn value_and_gradient(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check(theta)?;
        self.counter.record(theta);
        let dev = theta - &self.prior.mean;
        let pdev = &self.prior.precision * &dev;
        let mut value = 0.5 * dev.dot(&pdev);
        let mut grad = pdev;
        if let Some((r, jac, s2)) = self.residuals(theta) {
            let rv = DVector::from_vec(r);
            value += 0.5 * rv.norm_squared() / s2;
            grad += jac.transpose() * rv / s2;
        }
        let ok = value.is_finite() && grad.iter().all(|g| g.is_finite());
        Self::finite((value, grad), ok)
    }

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        self.counter.record(theta);
        let mut h = self.prior.precision.clone();
        if let Some((r, jac, s2)) = self.residuals(theta) {
            h += jac.transpose() * &jac / s2;
            // ∂²u_k/∂θ_i² = −∂u_k/∂θ_i, diagonal only.
            for (k, rk) in r.iter().enumerate() {
                for i in 0..theta.len() {
                    h[(i, i)] -= rk * jac[(k, i)] / s2;
                }
            }
        }
        let ok = h.iter().all(|v| v.is_finite());
        Self::finite(h, ok)
    }

    fn evaluations(&self) -> u64 {
        self.counter.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unit_stiffness_gives_identity_displacement() {
        for d in [1, 3, 7] {
            let theta = DVector::zeros(d);
            for x in [0.0, 0.13, 0.5, 0.999, 1.0] {
                assert!((forward_displacement(&theta, x).unwrap() - x).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_cell_example() {
        let theta = v(&[2f64.ln(), 0.0]);
        assert_relative_eq!(forward_displacement(&theta, 1.0).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn continuous_at_cell_boundaries() {
        let theta = v(&[0.3, -0.8, 1.1, 0.2]);
        for i in 1..4 {
            let x = i as f64 / 4.0;
            let left = forward_displacement(&theta, x - 1e-15).unwrap();
            let right = forward_displacement(&theta, x + 1e-15).unwrap();
            let at = forward_displacement(&theta, x).unwrap();
            assert!((left - at).abs() < 1e-14 && (right - at).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_locations_outside_bar() {
        assert!(forward_displacement(&v(&[0.0]), 1.5).is_err());
        assert!(forward_displacement(&v(&[0.0]), -0.1).is_err());
    }

    #[test]
    fn displacement_monotone_in_x_and_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = rng.gen_range(1..8);
            let theta = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let mut prev = 0.0;
            for j in 1..=1000 {
                let u = forward_displacement(&theta, j as f64 / 1000.0).unwrap();
                assert!(u > prev);
                prev = u;
            }
            let i = rng.gen_range(0..d);
            let mut bumped = theta.clone();
            bumped[i] += 0.1;
            assert!(forward_displacement(&bumped, 1.0).unwrap() < forward_displacement(&theta, 1.0).unwrap());
        }
    }

    #[test]
    fn prior_limits_and_symmetry() {
        let mut spec = PriorSpec::new(2);
        spec.length_scale = 1e6;
        let p = project_prior(&spec).unwrap();
        assert!(p.covariance.iter().all(|c| (c - 1.0).abs() < 1e-4));

        for d in [1, 3, 10] {
            let p = project_prior(&PriorSpec::new(d)).unwrap();
            assert_eq!(p.covariance, p.covariance.transpose());
            for i in 0..d {
                assert!(p.covariance[(i, i)] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn prior_refinement_consistency() {
        let coarse = project_prior(&PriorSpec::new(3)).unwrap();
        let fine = project_prior(&PriorSpec::new(6)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut avg = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        avg += fine.covariance[(2 * i + a, 2 * j + b)];
                    }
                }
                avg /= 4.0;
                assert_relative_eq!(avg, coarse.covariance[(i, j)], max_relative = 1e-3);
            }
        }
    }

    #[test]
    fn sensor_layout() {
        assert_eq!(sensor_locations(2), vec![0.5]);
        assert_eq!(sensor_locations(5), vec![0.25, 0.5, 0.75]);
        assert!(sensor_locations(1).is_empty());
    }

    #[test]
    fn synthetic_is_deterministic_and_noise_free_variant_exact() {
        let spec = PriorSpec::new(5);
        assert_eq!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&spec, 4).unwrap());
        assert_ne!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&spec, 5).unwrap());
        let clean = generate_synthetic_with(&spec, 4, SIGMA_OBS, false).unwrap();
        let theta = DVector::from_vec(clean.theta_star.clone());
        for (x, y) in clean.sensor_locations.iter().zip(&clean.observations) {
            assert_eq!(forward_displacement(&theta, *x).unwrap(), *y);
        }
    }

    #[test]
    fn noise_free_data_at_zero_stiffness_equals_sensor_locations() {
        let obs = Observations {
            sensor_locations: sensor_locations(4),
            values: sensor_locations(4),
            noise_std: SIGMA_OBS,
        };
        let mut spec = PriorSpec::new(4);
        spec.mean_field = 0.0;
        let post = BarPosterior::new(project_prior(&spec).unwrap(), obs).unwrap();
        assert!(post.value(&DVector::zeros(4)).unwrap().abs() < 1e-15);
        assert!(post.gradient(&DVector::zeros(4)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn prior_only_is_gaussian() {
        let prior = project_prior(&PriorSpec::new(3)).unwrap();
        let post = BarPosterior::prior_only(prior.clone());
        let theta = v(&[0.2, 1.4, -0.3]);
        let g = post.gradient(&theta).unwrap();
        let expected = &prior.precision * (&theta - &prior.mean);
        assert!((g - expected).norm() < 1e-12);
        assert_eq!(post.hessian(&theta).unwrap(), prior.precision);
    }

    #[test]
    fn counts_distinct_points() {
        let problem = generate_synthetic(&PriorSpec::new(4), 1).unwrap();
        let post = BarPosterior::from_synthetic(&problem, &PriorSpec::new(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 1..=10u64 {
            let t = DVector::from_fn(4, |_, _| rng.gen_range(0.0..2.0));
            post.value(&t).unwrap();
            post.gradient(&t).unwrap();
            post.hessian(&t).unwrap();
            assert_eq!(post.evaluations(), k);
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let problem = generate_synthetic(&PriorSpec::new(2), 1).unwrap();
        let post = BarPosterior::from_synthetic(&problem, &PriorSpec::new(2)).unwrap();
        assert!(matches!(post.value(&v(&[-800.0, 0.0])), Err(Error::Numeric(_))));
    }
}
