use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Chain;
use crate::error::{check_dim, Error, Result};
use crate::potential::Potential;

pub const WINDOW: u64 = 100;
pub const SWITCH_ITERATION: u64 = 1000;
pub const FREEZE_ITERATION: u64 = 2000;
pub const LOW_ACCEPTANCE: f64 = 0.2;
pub const HIGH_ACCEPTANCE: f64 = 0.25;
const RIDGE: f64 = 1e-8;

/// Proposal covariance and the adaptation schedule state.
#[derive(Debug, Clone, PartialEq)]
pub struct RwmState {
    pub proposal_cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    pub iteration: u64,
    window_accepted: u64,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl RwmState {
    pub fn new(d: usize) -> Self {
        Self {
            proposal_cov: DMatrix::identity(d, d),
            chol: DMatrix::identity(d, d),
            iteration: 0,
            window_accepted: 0,
            sum: DVector::zeros(d),
            outer: DMatrix::zeros(d, d),
        }
    }

    pub fn propose<R: Rng>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(x.len(), |_, _| rng.sample(StandardNormal));
        x + &self.chol * z
    }

    /// Register the outcome of one iteration with current state `x` and adapt.
    ///
    /// Every `WINDOW` iterations up to `FREEZE_ITERATION` the covariance is scaled by 0.9
    /// or 1.1 depending on the window acceptance rate. At `SWITCH_ITERATION` it is first
    /// replaced by the empirical chain covariance times `2.38²/d`.
    pub fn record(&mut self, accepted: bool, x: &DVector<f64>) -> Result<()> {
        self.iteration += 1;
        self.window_accepted += accepted as u64;
        if self.iteration <= SWITCH_ITERATION {
            self.sum += x;
            self.outer += x * x.transpose();
        }
        if self.iteration > FREEZE_ITERATION || self.iteration % WINDOW != 0 {
            return Ok(());
        }
        if self.iteration == SWITCH_ITERATION {
            let n = SWITCH_ITERATION as f64;
            let d = x.len() as f64;
            let mean = &self.sum / n;
            let cov = (&self.outer - &mean * mean.transpose() * n) / (n - 1.0);
            self.proposal_cov = cov * (2.38 * 2.38 / d);
        }
        let rate = self.window_accepted as f64 / WINDOW as f64;
        self.window_accepted = 0;
        if rate < LOW_ACCEPTANCE {
            self.proposal_cov *= 0.9;
        } else if rate > HIGH_ACCEPTANCE {
            self.proposal_cov *= 1.1;
        }
        self.refactor()
    }

    fn refactor(&mut self) -> Result<()> {
        let d = self.proposal_cov.nrows();
        let mut ridge = 0.0;
        for _ in 0..12 {
            let m = &self.proposal_cov + DMatrix::identity(d, d) * ridge;
            if let Some(c) = m.clone().cholesky() {
                self.proposal_cov = m;
                self.chol = c.l();
                return Ok(());
            }
            ridge = if ridge == 0.0 { RIDGE } else { ridge * 10.0 };
        }
        Err(Error::NotPositiveDefinite("random-walk proposal covariance".into()))
    }
}

#[derive(Debug, Clone)]
pub struct RwmOptions {
    pub n_iters: usize,
    pub seed: u64,
    /// Stop before a proposal once the evaluation counter reaches this value.
    pub max_evaluations: Option<u64>,
}

impl RwmOptions {
    pub fn new(n_iters: usize, seed: u64) -> Self {
        Self {
            n_iters,
            seed,
            max_evaluations: None,
        }
    }
}

/// Adaptive random-walk Metropolis from `x0`.
///
/// The initial point costs one evaluation; each proposal costs one more. Proposals with
/// a non-finite potential are rejected.
pub fn rwm_run<P: Potential + ?Sized>(tp: &P, x0: &DVector<f64>, opts: &RwmOptions) -> Result<Chain> {
    if opts.n_iters == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    check_dim(tp.dim(), x0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = RwmState::new(tp.dim());
    let mut x = x0.clone();
    let mut psi = tp.value(&x)?;
    let mut chain = Chain::with_capacity(opts.n_iters);
    for _ in 0..opts.n_iters {
        if opts.max_evaluations.is_some_and(|m| tp.evaluations() >= m) {
            chain.diagnostics.stopped_by_budget = true;
            break;
        }
        let y = state.propose(&x, &mut rng);
        let log_u: f64 = rng.gen::<f64>().ln();
        let accepted = match tp.value(&y) {
            Ok(psi_y) if log_u < psi - psi_y => {
                x = y;
                psi = psi_y;
                true
            }
            Ok(_) | Err(Error::Numeric(_)) => false,
            Err(e) => return Err(e),
        };
        state.record(accepted, &x)?;
        chain.push(x.clone(), accepted, tp.evaluations(), accepted as u8 as f64);
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dead_band_keeps_covariance() {
        let mut s = RwmState::new(2);
        let x = DVector::zeros(2);
        for k in 0..100 {
            s.record(k < 22, &x).unwrap();
        }
        assert_eq!(s.proposal_cov, DMatrix::identity(2, 2));
    }

    #[test]
    fn zero_acceptance_shrinks_twice() {
        let mut s = RwmState::new(2);
        let x = DVector::zeros(2);
        for _ in 0..200 {
            s.record(false, &x).unwrap();
        }
        assert!((s.proposal_cov[(0, 0)] - 0.81).abs() < 1e-15);
        assert_eq!(s.proposal_cov[(0, 1)], 0.0);
    }

    #[test]
    fn frozen_after_schedule() {
        let mut s = RwmState::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..FREEZE_ITERATION {
            let x = DVector::from_element(1, rng.sample::<f64, _>(StandardNormal));
            s.record(rng.gen_bool(0.5), &x).unwrap();
        }
        let frozen = s.proposal_cov.clone();
        for _ in 0..1000 {
            s.record(true, &DVector::from_element(1, 3.0)).unwrap();
        }
        assert_eq!(s.proposal_cov, frozen);
    }

    #[test]
    fn degenerate_chain_gets_ridge() {
        let mut s = RwmState::new(2);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        for _ in 0..SWITCH_ITERATION {
            s.record(false, &x).unwrap();
        }
        assert!(s.proposal_cov[(0, 0)] > 0.0);
        assert!(s.proposal_cov.clone().cholesky().is_some());
    }
}
