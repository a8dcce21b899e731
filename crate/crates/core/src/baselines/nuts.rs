//! Slice-based No-U-Turn sampler with dual-averaging step-size adaptation and an identity
//! mass matrix (the affine map already whitens the target).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Chain;
use crate::error::{check_dim, Error, Result};
use crate::potential::Potential;

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct NutsOptions {
    pub n_iters: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub n_adapt: usize,
    pub max_depth: u32,
    pub max_evaluations: Option<u64>,
}

impl NutsOptions {
    pub fn new(n_iters: usize, seed: u64) -> Self {
        Self {
            n_iters,
            seed,
            target_accept: 0.8,
            n_adapt: 200,
            max_depth: 10,
            max_evaluations: None,
        }
    }
}

/// Position, momentum, potential and its gradient at one leapfrog state.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub potential: f64,
    pub grad: DVector<f64>,
}

impl PhasePoint {
    pub fn new<P: Potential + ?Sized>(tp: &P, q: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        let (potential, grad) = tp.value_and_gradient(&q)?;
        Ok(Self { q, p, potential, grad })
    }

    pub fn hamiltonian(&self) -> f64 {
        self.potential + 0.5 * self.p.norm_squared()
    }
}

/// One leapfrog step of size `eps` (negative to integrate backwards); one model evaluation.
pub fn leapfrog<P: Potential + ?Sized>(tp: &P, z: &PhasePoint, eps: f64) -> Result<PhasePoint> {
    let p_half = &z.p - &z.grad * (0.5 * eps);
    let q = &z.q + &p_half * eps;
    let (potential, grad) = tp.value_and_gradient(&q)?;
    let p = p_half - &grad * (0.5 * eps);
    Ok(PhasePoint { q, p, potential, grad })
}

/// Nesterov dual averaging of `log ε` towards a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    m: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            m: 0.0,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.m += 1.0;
        let w = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Budget {
    limit: Option<u64>,
}

impl Budget {
    fn exhausted<P: Potential + ?Sized>(&self, tp: &P) -> bool {
        self.limit.is_some_and(|m| tp.evaluations() >= m)
    }
}

struct Tree {
    minus: PhasePoint,
    plus: PhasePoint,
    proposal: PhasePoint,
    n: u64,
    keep_going: bool,
    alpha: f64,
    n_alpha: u64,
    divergent: bool,
}

struct Ctx<'a, P: ?Sized> {
    tp: &'a P,
    log_slice: f64,
    h0: f64,
    eps: f64,
    budget: &'a Budget,
    out_of_budget: bool,
}

fn no_u_turn(minus: &PhasePoint, plus: &PhasePoint) -> bool {
    let dq = &plus.q - &minus.q;
    dq.dot(&minus.p) >= 0.0 && dq.dot(&plus.p) >= 0.0
}

fn build_tree<P: Potential + ?Sized, R: Rng>(
    ctx: &mut Ctx<'_, P>,
    z: &PhasePoint,
    dir: f64,
    depth: u32,
    rng: &mut R,
) -> Result<Tree> {
    if depth == 0 {
        if ctx.budget.exhausted(ctx.tp) {
            ctx.out_of_budget = true;
            return Ok(dead_leaf(z));
        }
        let next = match leapfrog(ctx.tp, z, dir * ctx.eps) {
            Ok(zn) if zn.hamiltonian().is_finite() => zn,
            Ok(_) | Err(Error::Numeric(_)) => {
                let mut t = dead_leaf(z);
                t.divergent = true;
                t.n_alpha = 1;
                return Ok(t);
            }
            Err(e) => return Err(e),
        };
        let h = next.hamiltonian();
        let divergent = ctx.log_slice + h - MAX_ENERGY_ERROR >= 0.0;
        return Ok(Tree {
            minus: next.clone(),
            plus: next.clone(),
            n: (ctx.log_slice <= -h) as u64,
            keep_going: !divergent,
            alpha: (ctx.h0 - h).exp().min(1.0),
            n_alpha: 1,
            divergent,
            proposal: next,
        });
    }
    let mut t = build_tree(ctx, z, dir, depth - 1, rng)?;
    if !t.keep_going {
        return Ok(t);
    }
    let edge = if dir < 0.0 { t.minus.clone() } else { t.plus.clone() };
    let t2 = build_tree(ctx, &edge, dir, depth - 1, rng)?;
    if dir < 0.0 {
        t.minus = t2.minus;
    } else {
        t.plus = t2.plus;
    }
    let total = t.n + t2.n;
    if total > 0 && rng.gen::<f64>() < t2.n as f64 / total as f64 {
        t.proposal = t2.proposal;
    }
    t.alpha += t2.alpha;
    t.n_alpha += t2.n_alpha;
    t.divergent |= t2.divergent;
    t.keep_going = t2.keep_going && no_u_turn(&t.minus, &t.plus);
    t.n = total;
    Ok(t)
}

fn dead_leaf(z: &PhasePoint) -> Tree {
    Tree {
        minus: z.clone(),
        plus: z.clone(),
        proposal: z.clone(),
        n: 0,
        keep_going: false,
        alpha: 0.0,
        n_alpha: 0,
        divergent: false,
    }
}

/// Initial step size by repeated doubling/halving until the one-step acceptance crosses ½.
fn find_reasonable_step<P: Potential + ?Sized, R: Rng>(tp: &P, z: &PhasePoint, budget: &Budget, rng: &mut R) -> Result<f64> {
    let mut z = z.clone();
    z.p = DVector::from_fn(z.q.len(), |_, _| rng.sample(StandardNormal));
    let h0 = z.hamiltonian();
    let log_ratio = |eps: f64| -> Result<f64> {
        match leapfrog(tp, &z, eps) {
            Ok(zn) => Ok(h0 - zn.hamiltonian()),
            Err(Error::Numeric(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    let mut eps = 1.0;
    let first = log_ratio(eps)?;
    let a = if first > 0.5f64.ln() { 1.0 } else { -1.0 };
    let mut lr = first;
    for _ in 0..50 {
        if budget.exhausted(tp) || !(a * lr > -a * 2f64.ln()) && lr.is_finite() {
            break;
        }
        let next = eps * 2f64.powf(a);
        if !(next > 1e-10 && next < 1e5) {
            break;
        }
        eps = next;
        lr = log_ratio(eps)?;
        if !lr.is_finite() && a > 0.0 {
            eps *= 0.5;
            break;
        }
    }
    Ok(eps)
}

/// NUTS from `x0`. Adaptation iterations are charged against the evaluation budget and
/// kept in the returned chain.
pub fn nuts_run<P: Potential + ?Sized>(tp: &P, x0: &DVector<f64>, opts: &NutsOptions) -> Result<Chain> {
    if opts.n_iters == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    if !(opts.target_accept > 0.0 && opts.target_accept < 1.0) || opts.max_depth == 0 {
        return Err(Error::InvalidArgument("target acceptance must lie in (0, 1) and depth be positive".into()));
    }
    check_dim(tp.dim(), x0.len())?;
    let d = tp.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let budget = Budget {
        limit: opts.max_evaluations,
    };
    let mut z = PhasePoint::new(tp, x0.clone(), DVector::zeros(d))?;
    let eps0 = find_reasonable_step(tp, &z, &budget, &mut rng)?;
    let mut da = DualAveraging::new(eps0, opts.target_accept);
    let mut eps = eps0;
    let mut chain = Chain::with_capacity(opts.n_iters);
    let (mut stat_sum, mut stat_n) = (0.0, 0u64);

    for it in 0..opts.n_iters {
        if budget.exhausted(tp) {
            chain.diagnostics.stopped_by_budget = true;
            break;
        }
        z.p = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let h0 = z.hamiltonian();
        let log_slice = -h0 + rng.gen::<f64>().ln();
        let mut ctx = Ctx {
            tp,
            log_slice,
            h0,
            eps,
            budget: &budget,
            out_of_budget: false,
        };
        let mut minus = z.clone();
        let mut plus = z.clone();
        let mut proposal = z.clone();
        let mut n = 1u64;
        let (mut alpha, mut n_alpha) = (0.0, 0u64);
        let mut divergent = false;
        for depth in 0..opts.max_depth {
            let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let start = if dir < 0.0 { minus.clone() } else { plus.clone() };
            let t = build_tree(&mut ctx, &start, dir, depth, &mut rng)?;
            if dir < 0.0 {
                minus = t.minus;
            } else {
                plus = t.plus;
            }
            alpha += t.alpha;
            n_alpha += t.n_alpha;
            divergent |= t.divergent;
            if t.keep_going && rng.gen::<f64>() < t.n as f64 / n as f64 {
                proposal = t.proposal;
            }
            n += t.n;
            if !t.keep_going || !no_u_turn(&minus, &plus) {
                break;
            }
        }
        if ctx.out_of_budget {
            chain.diagnostics.stopped_by_budget = true;
            break;
        }
        let stat = if n_alpha > 0 { alpha / n_alpha as f64 } else { 0.0 };
        if divergent {
            chain.diagnostics.divergences += 1;
        }
        if it < opts.n_adapt {
            da.update(stat);
            eps = if it + 1 == opts.n_adapt { da.final_step() } else { da.current() };
        } else {
            stat_sum += stat;
            stat_n += 1;
        }
        let moved = proposal.q != z.q;
        proposal.p = DVector::zeros(d);
        z = proposal;
        chain.push(z.q.clone(), moved, tp.evaluations(), stat);
    }
    chain.diagnostics.step_size = Some(eps);
    chain.diagnostics.mean_accept_stat = (stat_n > 0).then(|| stat_sum / stat_n as f64);
    Ok(chain)
}
