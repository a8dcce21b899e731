//! Surrogate-assisted piecewise-deterministic samplers (Zig-Zag, Bouncy Particle) for
//! Bayesian coefficient inference in a 1D elastic bar, with baselines and metrics.

pub mod affine;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod metrics;
pub mod optim;
pub mod pdmp;
pub mod problem;
pub mod potential;
pub mod surrogate;

pub use error::{Error, Result};
pub use potential::{EvalCounter, GaussianPotential, Potential};
