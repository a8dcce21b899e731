use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::sample_moments;
use crate::baselines::{rwm_run, RwmOptions};
use crate::error::{Error, Result};
use crate::potential::Potential;

/// Leading reference-chain samples discarded as burn-in.
pub const REFERENCE_BURN_IN: usize = 5000;
/// Smallest number of retained samples accepted for a reference.
pub const MIN_REFERENCE_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub n_samples: usize,
    pub seed: u64,
    pub burn_in: usize,
}

/// Long-run reference draws in whitened coordinates with their moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePosterior {
    pub samples: Vec<DVector<f64>>,
    pub mean: DVector<f64>,
    pub variances: DVector<f64>,
    pub provenance: Provenance,
}

impl ReferencePosterior {
    pub fn from_samples(samples: Vec<DVector<f64>>, provenance: Provenance) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("reference needs samples".into()));
        }
        let (mean, variances) = sample_moments(&samples);
        Ok(Self {
            samples,
            mean,
            variances,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Check stored moments against the stored samples.
    pub fn verify(&self, tol: f64) -> Result<()> {
        let (m, v) = sample_moments(&self.samples);
        let err = (m - &self.mean).amax().max((v - &self.variances).amax());
        if err > tol {
            return Err(Error::Contract(format!("reference moments off by {err:.3e}")));
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let r: Self = serde_json::from_reader(f)?;
        r.verify(1e-10)?;
        Ok(r)
    }
}

/// Adaptive random-walk reference run of `n` iterations from the origin; the first
/// [`REFERENCE_BURN_IN`] samples are dropped.
pub fn build_reference<P: Potential + ?Sized>(tp: &P, n: usize, seed: u64) -> Result<ReferencePosterior> {
    if n < MIN_REFERENCE_SAMPLES + REFERENCE_BURN_IN {
        return Err(Error::InvalidArgument(format!(
            "reference needs at least {} iterations, got {n}",
            MIN_REFERENCE_SAMPLES + REFERENCE_BURN_IN
        )));
    }
    let chain = rwm_run(tp, &DVector::zeros(tp.dim()), &RwmOptions::new(n, seed))?;
    let kept = chain.samples[REFERENCE_BURN_IN..].to_vec();
    let provenance = Provenance {
        method: "rwm".into(),
        n_samples: kept.len(),
        seed,
        burn_in: REFERENCE_BURN_IN,
    };
    ReferencePosterior::from_samples(kept, provenance)
}
