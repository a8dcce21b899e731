use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problem::{PriorSpec, SIGMA_OBS};
use crate::surrogate::SurrogateKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_mean_field")]
    pub mean_field: f64,
    #[serde(default = "default_one")]
    pub signal_std: f64,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
}

fn default_mean_field() -> f64 {
    1.0
}
fn default_one() -> f64 {
    1.0
}
fn default_length_scale() -> f64 {
    0.3
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean_field: 1.0,
            signal_std: 1.0,
            length_scale: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_sigma_obs")]
    pub sigma_obs: f64,
    #[serde(default)]
    pub prior: PriorConfig,
}

fn default_sigma_obs() -> f64 {
    SIGMA_OBS
}

impl ProblemConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            data_seed: 0,
            sigma_obs: SIGMA_OBS,
            prior: PriorConfig::default(),
        }
    }

    pub fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            mean_field: self.prior.mean_field,
            signal_std: self.prior.signal_std,
            length_scale: self.prior.length_scale,
            dimension: self.d,
        }
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Zigzag,
    Bps,
    Rwm,
    Nuts,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Zigzag => "zigzag",
            Self::Bps => "bps",
            Self::Rwm => "rwm",
            Self::Nuts => "nuts",
        }
    }

    pub fn is_pdmp(self) -> bool {
        matches!(self, Self::Zigzag | Self::Bps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    /// Training points for GP kinds; defaults to 25 per dimension.
    #[serde(default)]
    pub n0: Option<usize>,
    /// Derivative observations for the adaptive GP (fixed by the kind otherwise).
    #[serde(default)]
    pub include_gradients: Option<bool>,
}

impl SurrogateConfig {
    pub fn new(kind: SurrogateKind) -> Self {
        Self {
            kind,
            n0: None,
            include_gradients: None,
        }
    }

    pub fn n0(&self, d: usize) -> usize {
        self.n0.unwrap_or(25 * d)
    }

    pub fn with_gradients(&self) -> bool {
        match self.kind {
            SurrogateKind::GradGp => true,
            SurrogateKind::AdaptiveGp => self.include_gradients.unwrap_or(true),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Load a stored reference instead of generating one.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_reference_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_reference_n() -> usize {
    205_000
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            path: None,
            n: default_reference_n(),
            seed: 0,
        }
    }
}

/// One cell of an experiment grid: a sampler setting repeated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output file stem; defaults to `method_surrogate_dD`.
    #[serde(default)]
    pub name: Option<String>,
    pub problem: ProblemConfig,
    pub method: Method,
    #[serde(default)]
    pub surrogate: Option<SurrogateConfig>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lambda_ref")]
    pub lambda_ref: f64,
    /// Maximum number of model evaluations, training included.
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    /// Compute the Sinkhorn divergence at checkpoints (expensive).
    #[serde(default)]
    pub wasserstein: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_resamples")]
    pub wasserstein_resamples: usize,
}

fn default_beta() -> f64 {
    2e-2
}
fn default_lambda_ref() -> f64 {
    0.1
}
fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_epsilon() -> f64 {
    0.02
}
fn default_resamples() -> usize {
    10
}

/// Default evaluation budget per dimension.
pub fn default_budget(d: usize) -> u64 {
    match d {
        0..=2 => 2000,
        3..=5 => 5000,
        _ => 10_000,
    }
}

/// `n` log-spaced integer checkpoints from 50 to `budget`, deduplicated.
pub fn log_checkpoints(budget: u64, n: usize) -> Vec<u64> {
    let lo = 50f64.min(budget as f64);
    let hi = budget as f64;
    let mut out: Vec<u64> = (0..n)
        .map(|k| {
            let f = if n == 1 { 1.0 } else { k as f64 / (n - 1) as f64 };
            (lo * (hi / lo).powf(f)).round() as u64
        })
        .collect();
    out.dedup();
    *out.last_mut().expect("at least one checkpoint") = budget;
    out
}

impl RunConfig {
    pub fn new(problem: ProblemConfig, method: Method, surrogate: Option<SurrogateConfig>) -> Self {
        Self {
            name: None,
            problem,
            method,
            surrogate,
            beta: default_beta(),
            lambda_ref: default_lambda_ref(),
            budget: None,
            checkpoints: None,
            seeds: default_seeds(),
            reference: ReferenceConfig::default(),
            wasserstein: false,
            epsilon: default_epsilon(),
            wasserstein_resamples: default_resamples(),
        }
    }

    pub fn surrogate_name(&self) -> &'static str {
        self.surrogate.as_ref().map_or("none", |s| s.kind.name())
    }

    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}_{}_d{}", self.method.name(), self.surrogate_name(), self.problem.d))
    }

    pub fn budget(&self) -> u64 {
        self.budget.unwrap_or_else(|| default_budget(self.problem.d))
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        self.checkpoints.clone().unwrap_or_else(|| log_checkpoints(self.budget(), 20))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name())));
        self.problem.prior_spec().validate()?;
        if !(self.problem.sigma_obs > 0.0) {
            return bad("observation noise must be positive".into());
        }
        match (self.method.is_pdmp(), &self.surrogate) {
            (true, None) => return bad("PDMP methods need a surrogate".into()),
            (false, Some(_)) => return bad("surrogates only apply to PDMP methods".into()),
            _ => {}
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative".into());
        }
        if !(self.lambda_ref > 0.0 && self.lambda_ref.is_finite()) {
            return bad("lambda_ref must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        let budget = self.budget();
        let cps = self.checkpoints();
        if cps.is_empty() || cps.windows(2).any(|w| w[0] >= w[1]) || cps.iter().any(|&c| c > budget) {
            return bad("checkpoints must be strictly increasing and within the budget".into());
        }
        if let Some(s) = &self.surrogate {
            if s.kind.uses_gp() && s.n0(self.problem.d) as u64 >= budget {
                return bad("GP training consumes the whole budget".into());
            }
        }
        if !(self.epsilon > 0.0) || self.wasserstein_resamples == 0 {
            return bad("Sinkhorn settings must be positive".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// A named list of runs, as read from a config file (`[[runs]]` tables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub name: String,
    pub runs: Vec<RunConfig>,
}

impl Sweep {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for r in &self.runs {
            r.validate()?;
            if !names.insert(r.name()) {
                return Err(Error::Config(format!("duplicate run name `{}`", r.name())));
            }
        }
        Ok(())
    }
}

pub(crate) fn hash_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("config serializes");
    hex_digest(&bytes)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
