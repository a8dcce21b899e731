use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Method, ProblemConfig, ReferenceConfig, RunConfig, Sweep};
use crate::affine::{build_map, AffineMap, TransformedPotential};
use crate::baselines::{nuts_run, rwm_run, Chain, NutsOptions, RwmOptions};
use crate::error::{Error, Result};
use crate::metrics::{build_reference, ess, rmse_mean, rmse_var, sinkhorn_divergence, ReferencePosterior, SinkhornOptions};
use crate::pdmp::{bps_run, zigzag_run, PdmpOptions, Skeleton};
use crate::potential::Potential;
use crate::problem::{generate_synthetic_with, BarPosterior, SyntheticProblem};
use crate::surrogate::{Surrogate, SurrogateKind};

/// Fraction of the sampling budget discarded as burn-in.
pub const BURN_IN_FRACTION: f64 = 0.05;
/// Whitened positions beyond this sup-norm count as a divergent run.
pub const DIVERGENCE_RADIUS: f64 = 8.0;
/// Checkpoints with fewer retained samples are skipped.
pub const MIN_SAMPLES: usize = 10;

/// Problem data, preconditioner and reference shared by every run on one problem.
pub struct Setting {
    pub problem: SyntheticProblem,
    pub posterior: BarPosterior,
    pub map: Arc<AffineMap>,
    pub reference: Arc<ReferencePosterior>,
}

impl Setting {
    /// Whitened potential with a fresh evaluation counter.
    pub fn potential(&self) -> Result<TransformedPotential<BarPosterior>> {
        TransformedPotential::new(self.posterior.fresh(), self.map.clone())
    }
}

/// Synthetic data and the affine map; neither is charged to any sampler budget.
pub fn prepare_problem(cfg: &ProblemConfig) -> Result<(SyntheticProblem, BarPosterior, Arc<AffineMap>)> {
    let spec = cfg.prior_spec();
    let problem = generate_synthetic_with(&spec, cfg.data_seed, cfg.sigma_obs, true)?;
    let posterior = BarPosterior::from_synthetic(&problem, &spec)?;
    let x0 = posterior.prior().mean.clone();
    let map = Arc::new(build_map(&posterior.fresh(), &x0)?);
    Ok((problem, posterior, map))
}

pub fn prepare_setting(cfg: &ProblemConfig, reference: &ReferenceConfig, cache_dir: Option<&Path>) -> Result<Setting> {
    let (problem, posterior, map) = prepare_problem(cfg)?;
    let reference = match &reference.path {
        Some(p) => ReferencePosterior::load(p)?,
        None => {
            let cached = cache_dir.map(|dir| dir.join(format!("reference_{}_{}_{}.json", &cfg.hash()[..16], reference.n, reference.seed)));
            match cached.as_ref().filter(|p| p.exists()) {
                Some(p) => ReferencePosterior::load(p)?,
                None => {
                    let tp = TransformedPotential::new(posterior.fresh(), map.clone())?;
                    let r = build_reference(&tp, reference.n, reference.seed)?;
                    if let Some(p) = cached {
                        if let Some(dir) = p.parent() {
                            std::fs::create_dir_all(dir)?;
                        }
                        r.save(&p)?;
                    }
                    r
                }
            }
        }
    };
    if reference.dim() != cfg.d {
        return Err(Error::DimensionMismatch {
            expected: cfg.d,
            got: reference.dim(),
        });
    }
    Ok(Setting {
        problem,
        posterior,
        map,
        reference: Arc::new(reference),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricPoint {
    pub n_eval: u64,
    pub rmse_mean: f64,
    pub rmse_var: f64,
    pub wasserstein: Option<f64>,
    pub ess_per_eval: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SeedDiagnostics {
    pub evaluations: u64,
    pub training_evaluations: u64,
    pub candidates: u64,
    pub accepted: u64,
    pub corrections: u64,
    pub refreshes: u64,
    pub max_corrections_per_attempt: u64,
    pub final_time: f64,
    pub nuts_divergences: u64,
    pub max_abs_position: f64,
    pub aborted: Option<String>,
    /// Aborted, or left the `DIVERGENCE_RADIUS` box.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub trace: Vec<MetricPoint>,
    pub diagnostics: SeedDiagnostics,
    pub skeleton: Option<Skeleton>,
    pub chain: Option<Chain>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub n_eval: u64,
    pub n_seeds: usize,
    pub rmse_mean: f64,
    pub rmse_var: f64,
    pub wasserstein: Option<f64>,
    pub ess_per_eval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: Vec<SeedOutcome>,
    pub aggregate: Vec<AggregatePoint>,
}

impl RunRecord {
    pub fn any_aborted(&self) -> bool {
        self.seeds.iter().any(|s| s.diagnostics.aborted.is_some())
    }
}

fn initial_position(d: usize, seed: u64) -> DVector<f64> {
    // Separate stream from the sampler so the start does not depend on the method.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_1a1e_0001);
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn build_surrogate<P: Potential + ?Sized>(cfg: &RunConfig, tp: &P, seed: u64) -> Result<Surrogate> {
    let s = cfg
        .surrogate
        .as_ref()
        .ok_or_else(|| Error::Config("PDMP run without surrogate".into()))?;
    let d = tp.dim();
    let fit_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(17);
    match s.kind {
        SurrogateKind::Constant => Ok(Surrogate::constant(d)),
        SurrogateKind::RandomGradient => Ok(Surrogate::random_gradient(d, fit_seed)),
        SurrogateKind::Laplace => Surrogate::laplace(tp),
        SurrogateKind::Gp | SurrogateKind::GradGp => Surrogate::gp(tp, s.n0(d), s.with_gradients(), fit_seed),
        SurrogateKind::AdaptiveGp => Surrogate::adaptive_gp(tp, s.n0(d), s.with_gradients(), fit_seed),
    }
}

struct Trajectory<'a> {
    reference: &'a ReferencePosterior,
    cfg: &'a RunConfig,
    seed: u64,
}

impl Trajectory<'_> {
    fn point(&self, n_eval: u64, mean: &DVector<f64>, var: &DVector<f64>, samples: &[DVector<f64>]) -> Result<MetricPoint> {
        let wasserstein = if self.cfg.wasserstein {
            Some(self.wasserstein(samples, n_eval)?)
        } else {
            None
        };
        Ok(MetricPoint {
            n_eval,
            rmse_mean: rmse_mean(mean, &self.reference.mean)?,
            rmse_var: rmse_var(var, &self.reference.variances)?,
            wasserstein,
            ess_per_eval: ess(samples)?.min / n_eval as f64,
        })
    }

    /// Divergence against `R` random reference subsets of the same size, averaged.
    fn wasserstein(&self, samples: &[DVector<f64>], n_eval: u64) -> Result<f64> {
        let refs = &self.reference.samples;
        let n = samples.len().min(refs.len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ n_eval.rotate_left(32));
        let opts = SinkhornOptions::default();
        let mut acc = 0.0;
        for _ in 0..self.cfg.wasserstein_resamples {
            let pick: Vec<DVector<f64>> = sample_indices(&mut rng, refs.len(), n).iter().map(|i| refs[i].clone()).collect();
            acc += sinkhorn_divergence(samples, &pick, self.cfg.epsilon, &opts)?;
        }
        Ok(acc / self.cfg.wasserstein_resamples as f64)
    }
}

fn skeleton_trace(t: &Trajectory<'_>, sk: &Skeleton, checkpoints: &[u64], train: u64, used: u64) -> Result<Vec<MetricPoint>> {
    let budget = t.cfg.budget();
    let burn_evals = train + (BURN_IN_FRACTION * budget.saturating_sub(train) as f64).ceil() as u64;
    let t_burn = sk.time_at_evaluations(burn_evals);
    let mut out = Vec::new();
    for &n in checkpoints {
        if n > used || n <= train {
            continue;
        }
        let t_n = sk.time_at_evaluations(n);
        if !(t_n > 0.0) {
            continue;
        }
        let start = if t_burn < t_n { t_burn } else { 0.0 };
        let (mean, var) = sk.moments_between(start, t_n)?;
        let samples = sk.discretize_between(n as usize, start, t_n)?;
        out.push(t.point(n, &mean, &var, &samples)?);
    }
    Ok(out)
}

fn chain_trace(t: &Trajectory<'_>, chain: &Chain, checkpoints: &[u64]) -> Result<Vec<MetricPoint>> {
    let burn_evals = (BURN_IN_FRACTION * t.cfg.budget() as f64).ceil() as u64;
    let burn = chain.len_within(burn_evals);
    let used = chain.evals.last().copied().unwrap_or(0);
    let mut out = Vec::new();
    for &n in checkpoints {
        if n > used {
            continue;
        }
        let k = chain.len_within(n);
        let start = if k >= burn + MIN_SAMPLES { burn } else { 0 };
        if k < start + MIN_SAMPLES {
            continue;
        }
        let (mean, var) = chain.moments_between(start, k)?;
        let kept = &chain.samples[start..k];
        let samples: Vec<DVector<f64>> = if t.cfg.wasserstein {
            // Expand to `n` points, weighting each state by the evaluations it held.
            (0..n as usize).map(|j| kept[j * kept.len() / n as usize].clone()).collect()
        } else {
            kept.to_vec()
        };
        let mut p = t.point(n, &mean, &var, &samples)?;
        if t.cfg.wasserstein {
            p.ess_per_eval = ess(kept)?.min / n as f64;
        }
        out.push(p);
    }
    Ok(out)
}

fn max_abs_skeleton(sk: &Skeleton) -> f64 {
    let last = sk.position_at(sk.final_time);
    sk.events
        .iter()
        .map(|e| e.position.amax())
        .chain(std::iter::once(last.amax()))
        .fold(0.0, f64::max)
}

/// One seed of one grid cell. Sampler failures are recorded in the diagnostics.
pub fn run_seed(cfg: &RunConfig, setting: &Setting, seed: u64, keep_paths: bool) -> Result<SeedOutcome> {
    let tp = setting.potential()?;
    let d = cfg.problem.d;
    let x0 = initial_position(d, seed);
    let budget = cfg.budget();
    let checkpoints = cfg.checkpoints();
    let traj = Trajectory {
        reference: &setting.reference,
        cfg,
        seed,
    };
    let mut diag = SeedDiagnostics::default();
    let mut out = SeedOutcome {
        seed,
        trace: Vec::new(),
        diagnostics: SeedDiagnostics::default(),
        skeleton: None,
        chain: None,
    };
    match cfg.method {
        Method::Zigzag | Method::Bps => {
            let mut surrogate = match build_surrogate(cfg, &tp, seed) {
                Ok(s) => s,
                Err(e) => {
                    diag.aborted = Some(format!("surrogate construction failed: {e}"));
                    diag.diverged = true;
                    diag.evaluations = tp.evaluations();
                    out.diagnostics = diag;
                    return Ok(out);
                }
            };
            let train = tp.evaluations();
            let mut opts = PdmpOptions::new(f64::INFINITY, cfg.beta, seed);
            opts.max_evaluations = Some(budget);
            opts.lambda_ref = cfg.lambda_ref;
            let sk = if cfg.method == Method::Zigzag {
                zigzag_run(&tp, &mut surrogate, &x0, &opts)?
            } else {
                bps_run(&tp, &mut surrogate, &x0, &opts)?
            };
            let used = tp.evaluations();
            diag.training_evaluations = train;
            diag.evaluations = used;
            diag.candidates = sk.stats.candidates;
            diag.accepted = sk.stats.accepted;
            diag.corrections = sk.stats.corrections;
            diag.refreshes = sk.stats.refreshes;
            diag.max_corrections_per_attempt = sk.stats.max_corrections_per_attempt;
            diag.final_time = sk.final_time;
            diag.max_abs_position = max_abs_skeleton(&sk);
            diag.aborted = sk.stats.aborted.clone();
            out.trace = skeleton_trace(&traj, &sk, &checkpoints, train, used)?;
            if keep_paths {
                out.skeleton = Some(sk);
            }
        }
        Method::Rwm | Method::Nuts => {
            let chain = if cfg.method == Method::Rwm {
                let mut o = RwmOptions::new(budget as usize, seed);
                o.max_evaluations = Some(budget);
                rwm_run(&tp, &x0, &o)?
            } else {
                let mut o = NutsOptions::new(budget as usize, seed);
                o.max_evaluations = Some(budget);
                nuts_run(&tp, &x0, &o)?
            };
            diag.evaluations = tp.evaluations();
            diag.accepted = chain.diagnostics.accepted;
            diag.nuts_divergences = chain.diagnostics.divergences;
            diag.max_abs_position = chain.samples.iter().map(|x| x.amax()).fold(0.0, f64::max);
            out.trace = chain_trace(&traj, &chain, &checkpoints)?;
            if keep_paths {
                out.chain = Some(chain);
            }
        }
    }
    diag.diverged = diag.aborted.is_some() || !(diag.max_abs_position <= DIVERGENCE_RADIUS);
    out.diagnostics = diag;
    Ok(out)
}

/// Mean over the seeds that reached each checkpoint.
pub fn aggregate(seeds: &[SeedOutcome]) -> Vec<AggregatePoint> {
    let mut by_n: BTreeMap<u64, Vec<&MetricPoint>> = BTreeMap::new();
    for s in seeds {
        for p in &s.trace {
            by_n.entry(p.n_eval).or_default().push(p);
        }
    }
    by_n.into_iter()
        .map(|(n_eval, ps)| {
            let k = ps.len() as f64;
            let mean = |f: &dyn Fn(&MetricPoint) -> f64| ps.iter().map(|p| f(p)).sum::<f64>() / k;
            let wasserstein = ps.iter().map(|p| p.wasserstein).collect::<Option<Vec<f64>>>().map(|w| w.iter().sum::<f64>() / k);
            AggregatePoint {
                n_eval,
                n_seeds: ps.len(),
                rmse_mean: mean(&|p| p.rmse_mean),
                rmse_var: mean(&|p| p.rmse_var),
                wasserstein,
                ess_per_eval: mean(&|p| p.ess_per_eval),
            }
        })
        .collect()
}

pub fn run_experiment(cfg: &RunConfig, setting: &Setting, keep_paths: bool) -> Result<RunRecord> {
    cfg.validate()?;
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, setting, s, keep_paths))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        name: cfg.name(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        aggregate: aggregate(&seeds),
        seeds,
    })
}

/// Run every cell of a sweep; settings are built once per distinct problem.
pub fn run_sweep(sweep: &Sweep, cache_dir: Option<&Path>, keep_paths: bool) -> Result<Vec<RunRecord>> {
    sweep.validate()?;
    let mut settings: BTreeMap<String, Arc<Setting>> = BTreeMap::new();
    for r in &sweep.runs {
        let key = format!("{}:{}", r.problem.hash(), serde_json::to_string(&r.reference)?);
        if !settings.contains_key(&key) {
            log::info!("preparing problem d = {} (data seed {})", r.problem.d, r.problem.data_seed);
            settings.insert(key, Arc::new(prepare_setting(&r.problem, &r.reference, cache_dir)?));
        }
    }
    let jobs: Vec<(usize, u64)> = sweep
        .runs
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(i, s)| {
            let r = &sweep.runs[i];
            let key = format!("{}:{}", r.problem.hash(), serde_json::to_string(&r.reference)?);
            let out = run_seed(r, &settings[&key], s, keep_paths)?;
            log::debug!("{} seed {s} done", r.name());
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = outcomes.into_iter();
    Ok(sweep
        .runs
        .iter()
        .map(|r| {
            let seeds: Vec<SeedOutcome> = it.by_ref().take(r.seeds.len()).collect();
            RunRecord {
                name: r.name(),
                config: r.clone(),
                config_hash: r.hash(),
                aggregate: aggregate(&seeds),
                seeds,
            }
        })
        .collect())
}

/// Default cache directory for references below an output directory.
pub fn reference_cache(out: &Path) -> PathBuf {
    out.join("references")
}
