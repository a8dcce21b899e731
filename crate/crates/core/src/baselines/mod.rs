//! Baseline MCMC samplers on the whitened potential: adaptive random-walk Metropolis and NUTS.

use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

pub mod nuts;
pub mod rwm;

pub use nuts::{nuts_run, NutsOptions};
pub use rwm::{rwm_run, RwmOptions, RwmState};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub accepted: u64,
    pub divergences: u64,
    /// Final step size (NUTS only).
    pub step_size: Option<f64>,
    /// Mean acceptance statistic after adaptation (NUTS only).
    pub mean_accept_stat: Option<f64>,
    pub stopped_by_budget: bool,
}

/// A Markov chain with per-iteration cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<DVector<f64>>,
    pub accepted: Vec<bool>,
    /// Cumulative model evaluations after each iteration.
    pub evals: Vec<u64>,
    /// Acceptance statistic per iteration (NUTS: average over the tree).
    pub accept_stats: Vec<f64>,
    pub diagnostics: ChainDiagnostics,
}

impl Chain {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            samples: Vec::with_capacity(n),
            accepted: Vec::with_capacity(n),
            evals: Vec::with_capacity(n),
            accept_stats: Vec::with_capacity(n),
            diagnostics: ChainDiagnostics::default(),
        }
    }

    pub(crate) fn push(&mut self, x: DVector<f64>, accepted: bool, evals: u64, stat: f64) {
        if accepted {
            self.diagnostics.accepted += 1;
        }
        self.samples.push(x);
        self.accepted.push(accepted);
        self.evals.push(evals);
        self.accept_stats.push(stat);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of leading iterations whose cumulative cost stays within `evals`.
    pub fn len_within(&self, evals: u64) -> usize {
        self.evals.partition_point(|&n| n <= evals)
    }

    /// Sample mean and (biased) variance of `samples[start..end]`.
    pub fn moments_between(&self, start: usize, end: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "empty or invalid sample range {start}..{end} of {}",
                self.len()
            )));
        }
        Ok(crate::metrics::sample_moments(&self.samples[start..end]))
    }

    /// CSV rows `iteration, ξ_1..ξ_d, accepted, n_evals_cumulative`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let d = self.samples.first().map_or(0, |x| x.len());
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iteration".to_string()];
        header.extend((1..=d).map(|i| format!("xi_{i}")));
        header.push("accepted".into());
        header.push("n_evals_cumulative".into());
        w.write_record(&header)?;
        for (k, x) in self.samples.iter().enumerate() {
            let mut row = vec![(k + 1).to_string()];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.push((self.accepted[k] as u8).to_string());
            row.push(self.evals[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
