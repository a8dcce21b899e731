//! Cheap approximations `Ψ̄` of the transformed potential used to propose event times.
//!
//! All families live in whitened coordinates, where the Laplace approximation is the
//! standard normal potential `½ξᵀξ + c`. GP-based kinds add a GP posterior mean fitted
//! to the residual `Ψ̃ − ½ξᵀξ`; the constant `c` is absorbed by the GP mean, so training
//! costs exactly one model evaluation per design point.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::{FitOptions, GpDataset, GpHyperparams, GpModel};
use crate::potential::Potential;

/// Training-set size beyond which the adaptive GP stops growing.
pub const ADAPTIVE_CAP: usize = 1000;
/// Number of doublings of the initial design for the adaptive GP.
pub const ADAPTIVE_DOUBLINGS: u32 = 5;
/// Joint systems larger than this are fitted without random restarts, and adaptive
/// refits above it keep their hyperparameters.
const RESTART_SYSTEM_LIMIT: usize = 600;
/// BFGS iterations for a warm-started adaptive refit.
const REFIT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Constant,
    RandomGradient,
    Laplace,
    Gp,
    GradGp,
    AdaptiveGp,
}

impl SurrogateKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::RandomGradient => "random_gradient",
            Self::Laplace => "laplace",
            Self::Gp => "gp",
            Self::GradGp => "grad_gp",
            Self::AdaptiveGp => "adaptive_gp",
        }
    }

    pub fn uses_gp(self) -> bool {
        matches!(self, Self::Gp | Self::GradGp | Self::AdaptiveGp)
    }
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => Self::Constant,
            "random_gradient" => Self::RandomGradient,
            "laplace" => Self::Laplace,
            "gp" => Self::Gp,
            "grad_gp" => Self::GradGp,
            "adaptive_gp" => Self::AdaptiveGp,
            other => return Err(Error::Config(format!("unknown surrogate kind `{other}`"))),
        })
    }
}

/// Shape of a proposal rate along the ray `ξ + s v` before the offset is added.
pub enum RayShape<'a> {
    /// Directional derivative `a + b s`.
    Affine { intercept: f64, slope: f64 },
    /// Directional derivative evaluated pointwise.
    Numeric(Box<dyn Fn(f64) -> f64 + 'a>),
}

#[derive(Debug, Clone)]
struct AdaptiveState {
    with_grad: bool,
    pending: GpDataset,
    trained_size: usize,
    milestones: Vec<usize>,
    fit_seed: u64,
    refits: usize,
    failed_refits: usize,
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    kind: SurrogateKind,
    dim: usize,
    laplace_const: f64,
    gp: Option<Arc<GpModel>>,
    rng: Option<ChaCha8Rng>,
    attempt_gradient: Option<DVector<f64>>,
    adaptive: Option<AdaptiveState>,
}

impl Surrogate {
    /// `Ψ̄ ≡ 0`: all correctness comes from the offsets.
    pub fn constant(dim: usize) -> Self {
        Self::plain(SurrogateKind::Constant, dim, 0.0)
    }

    /// Test-only: a gradient with i.i.d. `U(−0.5, 0.5)` components, redrawn per attempt.
    pub fn random_gradient(dim: usize, seed: u64) -> Self {
        let mut s = Self::plain(SurrogateKind::RandomGradient, dim, 0.0);
        s.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        s.begin_attempt();
        s
    }

    /// `½ξᵀξ + Ψ̃(0)`; costs one model evaluation.
    pub fn laplace<P: Potential + ?Sized>(tp: &P) -> Result<Self> {
        let c = tp.value(&DVector::zeros(tp.dim()))?;
        Ok(Self::plain(SurrogateKind::Laplace, tp.dim(), c))
    }

    pub fn laplace_with_const(dim: usize, c: f64) -> Self {
        Self::plain(SurrogateKind::Laplace, dim, c)
    }

    /// Laplace plus a GP residual trained on `n0` standard-normal design points.
    /// Costs exactly `n0` model evaluations.
    pub fn gp<P: Potential + ?Sized>(tp: &P, n0: usize, include_gradients: bool, seed: u64) -> Result<Self> {
        let kind = if include_gradients { SurrogateKind::GradGp } else { SurrogateKind::Gp };
        let (model, _) = train_residual_gp(tp, n0, include_gradients, seed)?;
        Ok(Self::with_model(kind, model))
    }

    /// GP surrogate whose training set grows from simulation data at `n0·2^n`.
    pub fn adaptive_gp<P: Potential + ?Sized>(tp: &P, n0: usize, include_gradients: bool, seed: u64) -> Result<Self> {
        let (model, dataset) = train_residual_gp(tp, n0, include_gradients, seed)?;
        let mut s = Self::with_model(SurrogateKind::AdaptiveGp, model);
        s.adaptive = Some(AdaptiveState {
            with_grad: include_gradients,
            pending: dataset,
            trained_size: n0,
            milestones: milestones(n0),
            fit_seed: seed,
            refits: 0,
            failed_refits: 0,
        });
        Ok(s)
    }

    /// Wrap an already fitted residual model.
    pub fn with_model(kind: SurrogateKind, model: GpModel) -> Self {
        let mut s = Self::plain(kind, model.dim(), 0.0);
        s.gp = Some(Arc::new(model));
        s
    }

    fn plain(kind: SurrogateKind, dim: usize, c: f64) -> Self {
        Self {
            kind,
            dim,
            laplace_const: c,
            gp: None,
            rng: None,
            attempt_gradient: None,
            adaptive: None,
        }
    }

    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn laplace_const(&self) -> f64 {
        self.laplace_const
    }

    pub fn model(&self) -> Option<&GpModel> {
        self.gp.as_deref()
    }

    /// Initial offset: a crude zero-gradient surrogate needs a non-zero rate to start.
    pub fn initial_offset(&self) -> f64 {
        if self.kind == SurrogateKind::Constant {
            1.0
        } else {
            0.0
        }
    }

    /// Start a new candidate-generation attempt (redraws the random gradient).
    pub fn begin_attempt(&mut self) {
        if let Some(rng) = self.rng.as_mut() {
            let g = DVector::from_fn(self.dim, |_, _| rng.gen_range(-0.5..0.5));
            self.attempt_gradient = Some(g);
        }
    }

    pub fn value(&self, xi: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, xi.len())?;
        Ok(match self.kind {
            SurrogateKind::Constant => 0.0,
            SurrogateKind::RandomGradient => {
                // Only the gradient is defined; report the linear potential it induces.
                self.attempt_gradient.as_ref().map_or(0.0, |g| g.dot(xi))
            }
            SurrogateKind::Laplace => 0.5 * xi.norm_squared() + self.laplace_const,
            _ => 0.5 * xi.norm_squared() + self.laplace_const + self.gp_model().mean_unchecked(xi.as_slice()),
        })
    }

    pub fn gradient(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, xi.len())?;
        Ok(match self.kind {
            SurrogateKind::Constant => DVector::zeros(self.dim),
            SurrogateKind::RandomGradient => self.attempt_gradient.clone().unwrap_or_else(|| DVector::zeros(self.dim)),
            SurrogateKind::Laplace => xi.clone(),
            _ => {
                let mut g = xi.clone();
                let mut m = vec![0.0; self.dim];
                self.gp_model().mean_grad_into(xi.as_slice(), &mut m);
                for (gi, mi) in g.iter_mut().zip(m) {
                    *gi += mi;
                }
                g
            }
        })
    }

    /// `∂Ψ̄/∂ξ_i` alone (cheaper than the full gradient for GP kinds).
    pub fn partial(&self, xi: &DVector<f64>, i: usize) -> f64 {
        match self.kind {
            SurrogateKind::Constant => 0.0,
            SurrogateKind::RandomGradient => self.attempt_gradient.as_ref().map_or(0.0, |g| g[i]),
            SurrogateKind::Laplace => xi[i],
            _ => xi[i] + self.gp_model().mean_partial(xi.as_slice(), i),
        }
    }

    /// Component-wise directional derivative `v_i ∂_iΨ̄(ξ + s v)` along the ray.
    pub fn component_ray(&self, xi: &DVector<f64>, v: &DVector<f64>, i: usize) -> RayShape<'_> {
        match self.kind {
            SurrogateKind::Constant => RayShape::Affine { intercept: 0.0, slope: 0.0 },
            SurrogateKind::RandomGradient => RayShape::Affine {
                intercept: v[i] * self.partial(xi, i),
                slope: 0.0,
            },
            SurrogateKind::Laplace => RayShape::Affine {
                intercept: v[i] * xi[i],
                slope: v[i] * v[i],
            },
            _ => {
                let (xi, v) = (xi.clone(), v.clone());
                RayShape::Numeric(Box::new(move |s| {
                    let x = &xi + &v * s;
                    v[i] * self.partial(&x, i)
                }))
            }
        }
    }

    /// Directional derivative `⟨v, ∇Ψ̄(ξ + s v)⟩` along the ray.
    pub fn directional_ray(&self, xi: &DVector<f64>, v: &DVector<f64>) -> RayShape<'_> {
        match self.kind {
            SurrogateKind::Constant => RayShape::Affine { intercept: 0.0, slope: 0.0 },
            SurrogateKind::RandomGradient => RayShape::Affine {
                intercept: self.attempt_gradient.as_ref().map_or(0.0, |g| g.dot(v)),
                slope: 0.0,
            },
            SurrogateKind::Laplace => RayShape::Affine {
                intercept: v.dot(xi),
                slope: v.norm_squared(),
            },
            _ => {
                let (xi, v) = (xi.clone(), v.clone());
                let model = self.gp_model();
                RayShape::Numeric(Box::new(move |s| {
                    let x = &xi + &v * s;
                    let mut m = vec![0.0; v.len()];
                    model.mean_grad_into(x.as_slice(), &mut m);
                    v.dot(&x) + m.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>()
                }))
            }
        }
    }

    fn gp_model(&self) -> &GpModel {
        self.gp.as_deref().expect("GP surrogate without a model")
    }

    /// Whether the sampler should pass every true evaluation to [`Self::observe`].
    pub fn wants_observations(&self) -> bool {
        self.adaptive.as_ref().is_some_and(|a| a.pending.len() < ADAPTIVE_CAP)
    }

    /// Record a true evaluation made during simulation. Never touches the model;
    /// retraining happens in [`Self::refresh_model`].
    pub fn observe(&mut self, xi: &DVector<f64>, value: f64, gradient: &DVector<f64>) {
        let Some(state) = self.adaptive.as_mut() else {
            return;
        };
        if state.pending.len() >= ADAPTIVE_CAP || state.pending.contains(xi) {
            return;
        }
        let r = value - 0.5 * xi.norm_squared();
        let g = state.with_grad.then(|| gradient - xi);
        if let Err(e) = state.pending.push(xi.clone(), r, g) {
            log::debug!("adaptive GP dropped an observation: {e}");
        }
    }

    /// Retrain when the collected data reach the next milestone. Returns whether the model
    /// changed. A failed refit keeps the previous model.
    pub fn refresh_model(&mut self) -> bool {
        let Some(state) = self.adaptive.as_mut() else {
            return false;
        };
        let Some(&target) = state.milestones.iter().find(|&&m| m > state.trained_size) else {
            return false;
        };
        if state.pending.len() < target {
            return false;
        }
        let init = self.gp.as_ref().map(|m| m.hyperparams().clone()).expect("adaptive model present");
        let opts = FitOptions {
            restarts: 0,
            max_iterations: REFIT_ITERATIONS,
            seed: state.fit_seed.wrapping_add(target as u64),
            ..FitOptions::default()
        };
        let data = state.pending.prefix(target);
        state.trained_size = target;
        let system = if state.with_grad { target * (1 + self.dim) } else { target };
        // Large systems keep the current hyperparameters: each likelihood gradient is cubic.
        let started = std::time::Instant::now();
        let refit = if system > RESTART_SYSTEM_LIMIT {
            GpModel::condition(data, init, state.with_grad)
        } else {
            GpModel::fit(data, &init, state.with_grad, &opts)
        };
        log::debug!("adaptive GP refit at {target} points (system {system}) took {:.1?}", started.elapsed());
        match refit {
            Ok(model) => {
                state.refits += 1;
                self.gp = Some(Arc::new(model));
                true
            }
            Err(e) => {
                state.failed_refits += 1;
                log::warn!("adaptive GP refit at {target} points failed, keeping previous model: {e}");
                false
            }
        }
    }

    /// `(trained size, collected points, refits, failed refits)` for the adaptive kind.
    pub fn adaptive_status(&self) -> Option<(usize, usize, usize, usize)> {
        self.adaptive
            .as_ref()
            .map(|a| (a.trained_size, a.pending.len(), a.refits, a.failed_refits))
    }
}

/// `N0·2^n` for `n = 1..=5`, capped at [`ADAPTIVE_CAP`].
pub fn milestones(n0: usize) -> Vec<usize> {
    (1..=ADAPTIVE_DOUBLINGS)
        .map(|n| n0 << n)
        .filter(|&m| m <= ADAPTIVE_CAP)
        .collect()
}

fn train_residual_gp<P: Potential + ?Sized>(
    tp: &P,
    n0: usize,
    include_gradients: bool,
    seed: u64,
) -> Result<(GpModel, GpDataset)> {
    if n0 == 0 {
        return Err(Error::InvalidArgument("GP surrogate needs at least one design point".into()));
    }
    let d = tp.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = GpDataset::empty(include_gradients);
    let mut values = Vec::with_capacity(n0);
    for _ in 0..n0 {
        let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let (v, g) = tp.value_and_gradient(&xi)?;
        let r = v - 0.5 * xi.norm_squared();
        values.push(r);
        let g = include_gradients.then(|| g - &xi);
        ds.push(xi, r, g)?;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let signal = var.max(1e-6);
    let init = GpHyperparams::new(mean, signal, vec![1.0; d], 1e-4 * signal)?;
    let system = if include_gradients { n0 * (1 + d) } else { n0 };
    let opts = FitOptions {
        restarts: if system > RESTART_SYSTEM_LIMIT { 0 } else { FitOptions::default().restarts },
        seed,
        ..FitOptions::default()
    };
    let model = GpModel::fit(ds.clone(), &init, include_gradients, &opts)?;
    Ok((model, ds))
}
