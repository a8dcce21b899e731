//! Gaussian process regression with an anisotropic squared-exponential kernel.
//!
//! The process has a constant prior mean `m`. Training data are function values and,
//! optionally, gradient observations at the same inputs. With gradients the joint
//! covariance is assembled over the stacked observation vector
//! `[y_1 … y_N, g_1,1 … g_1,d, …, g_N,d]`, and the gradient entries have prior mean zero.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood with a
//! quasi-Newton method in log-space for the positive parameters.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::optim::{self, BfgsOptions};

/// Base jitter, relative to the signal variance, added to the kernel diagonal.
pub const JITTER_FLOOR: f64 = 1e-8;
/// Largest relative jitter tried before a fit is declared failed.
pub const JITTER_CEILING: f64 = 1e-2;
/// Inputs closer than this (max-norm) are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub mean_const: f64,
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl GpHyperparams {
    pub fn new(mean_const: f64, signal_var: f64, length_scales: Vec<f64>, noise_var: f64) -> Result<Self> {
        let h = Self {
            mean_const,
            signal_var,
            length_scales,
            noise_var,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn isotropic(d: usize, signal_var: f64, length_scale: f64, noise_var: f64) -> Self {
        Self {
            mean_const: 0.0,
            signal_var,
            length_scales: vec![length_scale; d],
            noise_var,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.is_empty() {
            return Err(Error::InvalidArgument("at least one length scale required".into()));
        }
        if self.length_scales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidArgument("length scales must be finite and positive".into()));
        }
        if !(self.signal_var.is_finite() && self.signal_var >= 0.0) {
            return Err(Error::InvalidArgument("signal variance must be non-negative".into()));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
        }
        if !self.mean_const.is_finite() {
            return Err(Error::InvalidArgument("mean constant must be finite".into()));
        }
        Ok(())
    }
}

/// `σ_f² exp(−½ Σ_j (a_j − b_j)² / ℓ_j²)`.
pub fn kernel_eval(a: &DVector<f64>, b: &DVector<f64>, h: &GpHyperparams) -> Result<f64> {
    check_dim(h.dim(), a.len())?;
    check_dim(h.dim(), b.len())?;
    Ok(kernel(a.as_slice(), b.as_slice(), h))
}

/// Gradient of the kernel with respect to its first argument: `k(a,b) (b_j − a_j) / ℓ_j²`.
pub fn kernel_grad_x(a: &DVector<f64>, b: &DVector<f64>, h: &GpHyperparams) -> Result<DVector<f64>> {
    check_dim(h.dim(), a.len())?;
    check_dim(h.dim(), b.len())?;
    let k = kernel(a.as_slice(), b.as_slice(), h);
    Ok(DVector::from_fn(a.len(), |j, _| {
        k * (b[j] - a[j]) / (h.length_scales[j] * h.length_scales[j])
    }))
}

/// `∂²k / ∂a_p ∂b_q`, the covariance between `∂_p f(a)` and `∂_q f(b)`.
///
/// Indices are zero-based.
pub fn kernel_cross_derivative(
    a: &DVector<f64>,
    b: &DVector<f64>,
    p: usize,
    q: usize,
    h: &GpHyperparams,
) -> Result<f64> {
    check_dim(h.dim(), a.len())?;
    check_dim(h.dim(), b.len())?;
    let d = h.dim();
    if p >= d || q >= d {
        return Err(Error::InvalidArgument(format!(
            "derivative index ({p}, {q}) out of range for dimension {d}"
        )));
    }
    let k = kernel(a.as_slice(), b.as_slice(), h);
    let (lp2, lq2) = (h.length_scales[p].powi(2), h.length_scales[q].powi(2));
    let delta = if p == q { 1.0 / lp2 } else { 0.0 };
    Ok(k * (delta - (a[p] - b[p]) * (a[q] - b[q]) / (lp2 * lq2)))
}

#[inline]
fn kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let mut s = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&h.length_scales) {
        let r = (x - y) / l;
        s += r * r;
    }
    h.signal_var * (-0.5 * s).exp()
}

/// Training inputs with values and optional gradient observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    inputs: Vec<DVector<f64>>,
    values: Vec<f64>,
    gradients: Option<Vec<DVector<f64>>>,
}

impl GpDataset {
    pub fn new(
        inputs: Vec<DVector<f64>>,
        values: Vec<f64>,
        gradients: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        check_dim(inputs.len(), values.len())?;
        if let Some(g) = &gradients {
            check_dim(inputs.len(), g.len())?;
        }
        let mut ds = Self {
            inputs: Vec::with_capacity(inputs.len()),
            values: Vec::with_capacity(values.len()),
            gradients: gradients.as_ref().map(|_| Vec::new()),
        };
        for (i, (x, y)) in inputs.into_iter().zip(values).enumerate() {
            let g = gradients.as_ref().map(|g| g[i].clone());
            ds.push(x, y, g)?;
        }
        Ok(ds)
    }

    pub fn empty(with_gradients: bool) -> Self {
        Self {
            inputs: Vec::new(),
            values: Vec::new(),
            gradients: with_gradients.then(Vec::new),
        }
    }

    /// Append one observation. Rejects duplicates and inconsistent shapes.
    pub fn push(&mut self, x: DVector<f64>, y: f64, gradient: Option<DVector<f64>>) -> Result<()> {
        if let Some(first) = self.inputs.first() {
            check_dim(first.len(), x.len())?;
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite training observation".into()));
        }
        match (&mut self.gradients, gradient) {
            (Some(gs), Some(g)) => {
                check_dim(x.len(), g.len())?;
                if self.inputs.iter().any(|p| is_duplicate(p, &x)) {
                    return Err(Error::InvalidArgument("duplicate training input".into()));
                }
                gs.push(g);
            }
            (None, None) => {
                if self.inputs.iter().any(|p| is_duplicate(p, &x)) {
                    return Err(Error::InvalidArgument("duplicate training input".into()));
                }
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument("dataset requires gradient observations".into()));
            }
            (None, Some(_)) => {
                return Err(Error::InvalidArgument("dataset has no gradient observations".into()));
            }
        }
        self.inputs.push(x);
        self.values.push(y);
        Ok(())
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.inputs.iter().any(|p| is_duplicate(p, x))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> Option<&[DVector<f64>]> {
        self.gradients.as_deref()
    }

    /// Copy of the first `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs[..n].to_vec(),
            values: self.values[..n].to_vec(),
            gradients: self.gradients.as_ref().map(|g| g[..n].to_vec()),
        }
    }

    /// Same inputs and values with gradient observations dropped.
    pub fn without_gradients(&self) -> Self {
        Self {
            inputs: self.inputs.clone(),
            values: self.values.clone(),
            gradients: None,
        }
    }

    /// CSV with columns `x_1..x_d, y` and, when present, `g_1..g_d`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        if self.gradients.is_some() {
            header.extend((1..=d).map(|j| format!("g_{j}")));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.inputs[i].iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.values[i]));
            if let Some(g) = &self.gradients {
                row.extend(g[i].iter().map(|v| format!("{v:e}")));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let d = header.iter().filter(|h| h.starts_with("x_")).count();
        let with_grad = header.iter().any(|h| h.starts_with("g_"));
        let expected = d + 1 + if with_grad { d } else { 0 };
        if d == 0 || header.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "unexpected dataset header with {} columns",
                header.len()
            )));
        }
        let mut ds = Self::empty(with_grad);
        for rec in r.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad number in dataset: {e}")))?;
            let x = DVector::from_column_slice(&nums[..d]);
            let g = with_grad.then(|| DVector::from_column_slice(&nums[d + 1..]));
            ds.push(x, nums[d], g)?;
        }
        Ok(ds)
    }
}

fn is_duplicate(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= DUPLICATE_TOL)
}

/// Joint covariance of the stacked observations (noise-free) and, optionally, its
/// derivatives with respect to `log ℓ_j`.
struct JointKernel<'a> {
    inputs: &'a [DVector<f64>],
    h: &'a GpHyperparams,
    with_grad: bool,
}

impl JointKernel<'_> {
    fn size(&self) -> usize {
        let n = self.inputs.len();
        if self.with_grad {
            n * (1 + self.h.dim())
        } else {
            n
        }
    }

    /// Stacked index of observation `o` (0 = value, 1 + p = ∂_p) at point `i`.
    fn index(&self, i: usize, o: usize) -> usize {
        if o == 0 {
            i
        } else {
            self.inputs.len() + i * self.h.dim() + (o - 1)
        }
    }

    fn observations(&self) -> usize {
        if self.with_grad {
            1 + self.h.dim()
        } else {
            1
        }
    }

    /// Covariance between observation `oa` at `a` and `ob` at `b` given the kernel value `k`
    /// and difference `r = a − b`.
    #[inline]
    fn entry(&self, k: f64, r: &[f64], oa: usize, ob: usize) -> f64 {
        let l2 = |j: usize| self.h.length_scales[j] * self.h.length_scales[j];
        match (oa, ob) {
            (0, 0) => k,
            (0, q) => k * r[q - 1] / l2(q - 1),
            (p, 0) => -k * r[p - 1] / l2(p - 1),
            (p, q) => {
                let (p, q) = (p - 1, q - 1);
                let a = if p == q { 1.0 / l2(p) } else { 0.0 };
                k * (a - r[p] * r[q] / (l2(p) * l2(q)))
            }
        }
    }

    /// Derivative of [`Self::entry`] with respect to `log ℓ_j`.
    #[inline]
    fn entry_dlog_ell(&self, k: f64, r: &[f64], oa: usize, ob: usize, j: usize) -> f64 {
        let l2 = |i: usize| self.h.length_scales[i] * self.h.length_scales[i];
        let s_j = r[j] * r[j] / l2(j);
        let dj = |i: usize| if i == j { 1.0 } else { 0.0 };
        match (oa, ob) {
            (0, 0) => k * s_j,
            (0, q) => {
                let q = q - 1;
                k * r[q] / l2(q) * (s_j - 2.0 * dj(q))
            }
            (p, 0) => {
                let p = p - 1;
                -k * r[p] / l2(p) * (s_j - 2.0 * dj(p))
            }
            (p, q) => {
                let (p, q) = (p - 1, q - 1);
                let a = if p == q { 1.0 / l2(p) } else { 0.0 };
                let b = r[p] * r[q] / (l2(p) * l2(q));
                k * s_j * (a - b) + k * (-2.0 * a * dj(p) + 2.0 * b * (dj(p) + dj(q)))
            }
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        let n = self.inputs.len();
        let no = self.observations();
        let size = self.size();
        let mut m = DMatrix::zeros(size, size);
        let mut r = vec![0.0; self.h.dim()];
        for i in 0..n {
            for k in i..n {
                let (a, b) = (&self.inputs[i], &self.inputs[k]);
                for (rj, (x, y)) in r.iter_mut().zip(a.iter().zip(b.iter())) {
                    *rj = x - y;
                }
                let kv = kernel(a.as_slice(), b.as_slice(), self.h);
                for oa in 0..no {
                    for ob in 0..no {
                        let v = self.entry(kv, &r, oa, ob);
                        let (ia, ib) = (self.index(i, oa), self.index(k, ob));
                        m[(ia, ib)] = v;
                        m[(ib, ia)] = v;
                    }
                }
            }
        }
        m
    }

    /// `Σ_ab W_ab ∂K_ab/∂log ℓ_j` for every `j`, for a symmetric weight matrix `W`.
    fn weighted_length_scale_derivatives(&self, w: &DMatrix<f64>) -> Vec<f64> {
        let n = self.inputs.len();
        let d = self.h.dim();
        let no = self.observations();
        let mut out = vec![0.0; d];
        let mut r = vec![0.0; d];
        for i in 0..n {
            for k in 0..n {
                let (a, b) = (&self.inputs[i], &self.inputs[k]);
                for (rj, (x, y)) in r.iter_mut().zip(a.iter().zip(b.iter())) {
                    *rj = x - y;
                }
                let kv = kernel(a.as_slice(), b.as_slice(), self.h);
                for oa in 0..no {
                    for ob in 0..no {
                        let wab = w[(self.index(i, oa), self.index(k, ob))];
                        if wab == 0.0 {
                            continue;
                        }
                        for (j, o) in out.iter_mut().enumerate() {
                            *o += wab * self.entry_dlog_ell(kv, &r, oa, ob, j);
                        }
                    }
                }
            }
        }
        out
    }
}

fn stacked_targets(ds: &GpDataset, with_grad: bool, mean: f64) -> (DVector<f64>, DVector<f64>) {
    let n = ds.len();
    let d = ds.dim();
    let size = if with_grad { n * (1 + d) } else { n };
    let mut y = DVector::zeros(size);
    let mut e = DVector::zeros(size);
    for i in 0..n {
        y[i] = ds.values[i] - mean;
        e[i] = 1.0;
    }
    if with_grad {
        let g = ds.gradients.as_ref().expect("gradient observations present");
        for i in 0..n {
            for p in 0..d {
                y[n + i * d + p] = g[i][p];
            }
        }
    }
    (y, e)
}

fn factorize(k: &DMatrix<f64>, signal_var: f64, noise_var: f64, jitter_rel: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut ky = k.clone();
    let diag = noise_var + jitter_rel * signal_var;
    for i in 0..ky.nrows() {
        ky[(i, i)] += diag;
    }
    let chol = Cholesky::new(ky)?;
    let l = chol.l_dirty();
    if (0..l.nrows()).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
        Some(chol)
    } else {
        None
    }
}

/// Log marginal likelihood and its gradient with respect to the natural hyperparameters,
/// ordered `[m, σ_f², ℓ_1, …, ℓ_d, σ_n²]`.
///
/// Uses the base jitter [`JITTER_FLOOR`]; the jitter scales with `σ_f²` and is included in
/// the derivative with respect to the signal variance.
pub fn log_marginal_likelihood(
    ds: &GpDataset,
    h: &GpHyperparams,
    include_gradients: bool,
) -> Result<(f64, DVector<f64>)> {
    h.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    check_dim(h.dim(), ds.dim())?;
    if include_gradients && ds.gradients.is_none() {
        return Err(Error::InvalidArgument("dataset has no gradient observations".into()));
    }
    lml_with_jitter(ds, h, include_gradients, JITTER_FLOOR, false)
        .map(|(v, g, _)| (v, g))
        .ok_or_else(|| Error::NotPositiveDefinite("kernel matrix at base jitter".into()))
}

fn lml_with_jitter(
    ds: &GpDataset,
    h: &GpHyperparams,
    with_grad: bool,
    jitter_rel: f64,
    profile_mean: bool,
) -> Option<(f64, DVector<f64>, f64)> {
    let jk = JointKernel {
        inputs: &ds.inputs,
        h,
        with_grad,
    };
    let k = jk.matrix();
    let chol = factorize(&k, h.signal_var, h.noise_var, jitter_rel)?;
    let (mut resid, e) = stacked_targets(ds, with_grad, h.mean_const);
    let mut mean = h.mean_const;
    if profile_mean {
        // Generalized least squares optimum of the constant mean for the current kernel.
        let kinv_e = chol.solve(&e);
        let shift = resid.dot(&kinv_e) / e.dot(&kinv_e);
        mean += shift;
        resid -= &e * shift;
    }
    let alpha = chol.solve(&resid);
    let size = resid.len() as f64;
    let l = chol.l_dirty();
    let log_det: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let value = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * size * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return None;
    }

    // K⁻¹ = L⁻ᵀL⁻¹; the product goes through the blocked matrix multiply.
    let mut linv = DMatrix::identity(l.nrows(), l.nrows());
    l.solve_lower_triangular_mut(&mut linv);
    let kinv = linv.transpose() * &linv;
    let w = &alpha * alpha.transpose() - &kinv;
    let d = h.dim();
    let mut grad = DVector::zeros(d + 3);
    grad[0] = if profile_mean { 0.0 } else { e.dot(&alpha) };
    // ∂K_y/∂σ_f² = K/σ_f² + jitter·I
    let tr_wk = w.component_mul(&k).sum();
    let tr_w = w.trace();
    grad[1] = if h.signal_var > 0.0 {
        0.5 * (tr_wk / h.signal_var + jitter_rel * tr_w)
    } else {
        0.0
    };
    let dell = jk.weighted_length_scale_derivatives(&w);
    for j in 0..d {
        grad[2 + j] = 0.5 * dell[j] / h.length_scales[j];
    }
    grad[d + 2] = 0.5 * tr_w;
    if grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some((value, grad, mean))
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Additional optimization runs from randomly perturbed starts.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            grad_tol: 1e-6,
            restarts: 3,
            seed: 0,
        }
    }
}

// Log-space boxes keep the optimizer away from degenerate kernels.
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-18.42, 18.42); // 1e-8 ..= 1e8
const LOG_LENGTH_BOUNDS: (f64, f64) = (-6.91, 6.91); // 1e-3 ..= 1e3
const LOG_NOISE_BOUNDS: (f64, f64) = (-27.63, 9.21); // 1e-12 ..= 1e4

fn pack(h: &GpHyperparams) -> DVector<f64> {
    let d = h.dim();
    let mut v = DVector::zeros(d + 3);
    v[0] = h.mean_const;
    v[1] = h.signal_var.max(1e-300).ln().clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1);
    for j in 0..d {
        v[2 + j] = h.length_scales[j].ln().clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1);
    }
    v[d + 2] = h.noise_var.max(1e-300).ln().clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1);
    v
}

fn unpack(v: &DVector<f64>, d: usize) -> Option<GpHyperparams> {
    let inside = |x: f64, b: (f64, f64)| x >= b.0 && x <= b.1;
    if !inside(v[1], LOG_SIGNAL_BOUNDS)
        || !(0..d).all(|j| inside(v[2 + j], LOG_LENGTH_BOUNDS))
        || !inside(v[d + 2], LOG_NOISE_BOUNDS)
        || !v[0].is_finite()
    {
        return None;
    }
    Some(GpHyperparams {
        mean_const: v[0],
        signal_var: v[1].exp(),
        length_scales: (0..d).map(|j| v[2 + j].exp()).collect(),
        noise_var: v[d + 2].exp(),
    })
}

/// A conditioned GP: immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyperparams: GpHyperparams,
    dataset: GpDataset,
    with_grad: bool,
    chol_factor: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    log_marginal_likelihood: f64,
}

impl GpModel {
    /// Condition on `dataset` with fixed hyperparameters, escalating the jitter ×10 from
    /// [`JITTER_FLOOR`] up to [`JITTER_CEILING`] if the factorization fails.
    pub fn condition(dataset: GpDataset, hyperparams: GpHyperparams, include_gradients: bool) -> Result<Self> {
        hyperparams.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        check_dim(hyperparams.dim(), dataset.dim())?;
        if include_gradients && dataset.gradients.is_none() {
            return Err(Error::InvalidArgument("dataset has no gradient observations".into()));
        }
        let jk = JointKernel {
            inputs: &dataset.inputs,
            h: &hyperparams,
            with_grad: include_gradients,
        };
        let k = jk.matrix();
        let mut jitter = JITTER_FLOOR;
        loop {
            if let Some(chol) = factorize(&k, hyperparams.signal_var, hyperparams.noise_var, jitter) {
                let (resid, _) = stacked_targets(&dataset, include_gradients, hyperparams.mean_const);
                let alpha = chol.solve(&resid);
                if alpha.iter().any(|a| !a.is_finite()) {
                    return Err(Error::FitFailure("non-finite weights".into()));
                }
                let l = chol.l();
                let log_det: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
                let lml = -0.5 * resid.dot(&alpha)
                    - 0.5 * log_det
                    - 0.5 * resid.len() as f64 * (2.0 * std::f64::consts::PI).ln();
                return Ok(Self {
                    hyperparams,
                    dataset,
                    with_grad: include_gradients,
                    chol_factor: l,
                    alpha,
                    jitter,
                    log_marginal_likelihood: lml,
                });
            }
            jitter *= 10.0;
            if jitter > JITTER_CEILING * (1.0 + 1e-9) {
                return Err(Error::FitFailure(
                    "kernel matrix not positive definite after jitter escalation".into(),
                ));
            }
        }
    }

    /// Fit hyperparameters by maximizing the log marginal likelihood, then condition.
    ///
    /// The constant mean is profiled out: for each kernel setting it takes its generalized
    /// least-squares optimum, so the search runs over the positive parameters only.
    pub fn fit(dataset: GpDataset, init: &GpHyperparams, include_gradients: bool, opts: &FitOptions) -> Result<Self> {
        init.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        check_dim(init.dim(), dataset.dim())?;
        if include_gradients && dataset.gradients.is_none() {
            return Err(Error::InvalidArgument("dataset has no gradient observations".into()));
        }
        let d = init.dim();
        let objective = |v: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
            let h = unpack(v, d)?;
            let (value, g, _) = lml_with_jitter(&dataset, &h, include_gradients, JITTER_FLOOR, true)?;
            // Chain rule to log-space for the positive parameters.
            let mut gl = -g;
            gl[1] *= h.signal_var;
            for j in 0..d {
                gl[2 + j] *= h.length_scales[j];
            }
            gl[d + 2] *= h.noise_var;
            Some((-value, gl))
        };
        let bfgs = BfgsOptions {
            max_iterations: opts.max_iterations,
            grad_tol: opts.grad_tol,
            max_step: 3.0,
            f_tol: 1e-10,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let base = pack(init);
        let mut best: Option<optim::BfgsOutcome> = None;
        for run in 0..=opts.restarts {
            let start = if run == 0 {
                base.clone()
            } else {
                let mut s = base.clone();
                for i in 1..s.len() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s[i] += z;
                }
                s[1] = s[1].clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1);
                for j in 0..d {
                    s[2 + j] = s[2 + j].clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1);
                }
                s[d + 2] = s[d + 2].clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1);
                s
            };
            if let Some(out) = optim::minimize(objective, start, &bfgs) {
                if best.as_ref().map_or(true, |b| out.value < b.value) {
                    best = Some(out);
                }
            }
        }
        let best = best.ok_or_else(|| Error::FitFailure("marginal likelihood not finite at any start".into()))?;
        if !best.value.is_finite() {
            return Err(Error::FitFailure("NaN in marginal likelihood".into()));
        }
        let mut h = unpack(&best.x, d).ok_or_else(|| Error::FitFailure("optimizer left the parameter box".into()))?;
        h.mean_const = lml_with_jitter(&dataset, &h, include_gradients, JITTER_FLOOR, true)
            .ok_or_else(|| Error::FitFailure("marginal likelihood not finite at optimum".into()))?
            .2;
        Self::condition(dataset, h, include_gradients)
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.dataset
    }

    pub fn uses_gradients(&self) -> bool {
        self.with_grad
    }

    pub fn dim(&self) -> usize {
        self.hyperparams.dim()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_factor
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// Posterior mean `m + K_*ᵀ α`.
    pub fn predict_mean(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.mean_unchecked(x.as_slice()))
    }

    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        let h = &self.hyperparams;
        let n = self.dataset.len();
        let d = h.dim();
        let mut acc = h.mean_const;
        for (i, xi) in self.dataset.inputs.iter().enumerate() {
            let k = kernel(x, xi.as_slice(), h);
            acc += self.alpha[i] * k;
            if self.with_grad {
                for q in 0..d {
                    let l2 = h.length_scales[q] * h.length_scales[q];
                    acc += self.alpha[n + i * d + q] * k * (x[q] - xi[q]) / l2;
                }
            }
        }
        acc
    }

    /// Gradient of the posterior mean with respect to the query point.
    pub fn predict_mean_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut g = DVector::zeros(self.dim());
        self.mean_grad_into(x.as_slice(), g.as_mut_slice());
        Ok(g)
    }

    pub(crate) fn mean_grad_into(&self, x: &[f64], out: &mut [f64]) {
        let h = &self.hyperparams;
        let n = self.dataset.len();
        let d = h.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut r = vec![0.0; d];
        for (i, xi) in self.dataset.inputs.iter().enumerate() {
            let k = kernel(x, xi.as_slice(), h);
            for q in 0..d {
                r[q] = (x[q] - xi[q]) / (h.length_scales[q] * h.length_scales[q]);
            }
            let a = self.alpha[i];
            for p in 0..d {
                out[p] -= a * k * r[p];
            }
            if self.with_grad {
                for p in 0..d {
                    let lp2 = h.length_scales[p] * h.length_scales[p];
                    let mut s = 0.0;
                    for q in 0..d {
                        let delta = if p == q { 1.0 / lp2 } else { 0.0 };
                        s += self.alpha[n + i * d + q] * (delta - r[p] * r[q]);
                    }
                    out[p] += k * s;
                }
            }
        }
    }

    /// `∂m_*/∂x_p` alone.
    pub(crate) fn mean_partial(&self, x: &[f64], p: usize) -> f64 {
        let h = &self.hyperparams;
        let n = self.dataset.len();
        let d = h.dim();
        let lp2 = h.length_scales[p] * h.length_scales[p];
        let mut out = 0.0;
        for (i, xi) in self.dataset.inputs.iter().enumerate() {
            let k = kernel(x, xi.as_slice(), h);
            let rp = (x[p] - xi[p]) / lp2;
            out -= self.alpha[i] * k * rp;
            if self.with_grad {
                let mut s = self.alpha[n + i * d + p] / lp2;
                for q in 0..d {
                    let lq2 = h.length_scales[q] * h.length_scales[q];
                    s -= self.alpha[n + i * d + q] * rp * (x[q] - xi[q]) / lq2;
                }
                out += k * s;
            }
        }
        out
    }

    /// Posterior variance of the latent function (without observation noise), clamped at 0.
    pub fn predict_variance(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let h = &self.hyperparams;
        let n = self.dataset.len();
        let d = h.dim();
        let size = self.alpha.len();
        let mut kstar = DVector::zeros(size);
        for (i, xi) in self.dataset.inputs.iter().enumerate() {
            let k = kernel(x.as_slice(), xi.as_slice(), h);
            kstar[i] = k;
            if self.with_grad {
                for q in 0..d {
                    kstar[n + i * d + q] = k * (x[q] - xi[q]) / (h.length_scales[q] * h.length_scales[q]);
                }
            }
        }
        let v = self
            .chol_factor
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        Ok((h.signal_var - v.dot(&v)).max(0.0))
    }
}
