//! Zig-Zag and Bouncy Particle samplers with surrogate-assisted thinning.
//!
//! Candidate event times come from the corrected surrogate rate
//! `λ̄ᶜ = max{0, directional derivative of Ψ̄ + γ}`. Each candidate costs one true
//! gradient evaluation. If the true rate exceeds the proposal there, the offset `γ` is
//! raised by the violation and the candidate is re-drawn with the same exponential budget.
//! Offsets decay by `exp(−β Δt)` after every committed advance.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::surrogate::RayShape;

pub mod bps;
pub mod rate;
pub mod skeleton;
pub mod zigzag;

pub use bps::bps_run;
pub use skeleton::{Event, EventKind, SamplerStats, Skeleton};
pub use zigzag::zigzag_run;

/// Corrections allowed within one candidate-generation attempt before the run aborts.
pub const CORRECTION_CAP: u64 = 1000;

#[derive(Debug, Clone)]
pub struct PdmpOptions {
    /// Offset decay rate `β ≥ 0`.
    pub beta: f64,
    pub final_time: f64,
    /// Stop once the potential's evaluation counter reaches this value.
    pub max_evaluations: Option<u64>,
    pub seed: u64,
    pub correction_cap: u64,
    /// Refreshment rate (Bouncy Particle only).
    pub lambda_ref: f64,
}

impl PdmpOptions {
    pub fn new(final_time: f64, beta: f64, seed: u64) -> Self {
        Self {
            beta,
            final_time,
            max_evaluations: None,
            seed,
            correction_cap: CORRECTION_CAP,
            lambda_ref: 0.1,
        }
    }

    fn validate(&self, bps: bool) -> Result<()> {
        if !(self.final_time > 0.0) {
            return Err(Error::InvalidArgument("final time must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument("decay rate must be non-negative".into()));
        }
        if bps && !(self.lambda_ref > 0.0 && self.lambda_ref.is_finite()) {
            return Err(Error::InvalidArgument("refresh rate must be positive".into()));
        }
        Ok(())
    }

    fn budget_reached(&self, evaluations: u64) -> bool {
        self.max_evaluations.is_some_and(|m| evaluations >= m)
    }
}

/// Candidate time for `max{0, shape(s) + offset}` with exponential budget `e`, or `None`
/// if no event occurs within `horizon`.
pub(crate) fn candidate_time(shape: RayShape<'_>, offset: f64, e: f64, horizon: f64) -> Result<Option<f64>> {
    match shape {
        RayShape::Affine { intercept, slope } => {
            Ok(rate::invert_affine(intercept + offset, slope, e).filter(|&t| t <= horizon))
        }
        RayShape::Numeric(f) => rate::invert_numeric(|s| (f(s) + offset).max(0.0), e, horizon),
    }
}

pub(crate) fn finite(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}
