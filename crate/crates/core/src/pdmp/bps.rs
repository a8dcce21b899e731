use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::zigzag::true_gradient;
use super::{candidate_time, finite, EventKind, PdmpOptions, Skeleton};
use crate::error::{check_dim, Result};
use crate::potential::Potential;
use crate::surrogate::Surrogate;

/// Gradients below this norm make the reflection undefined; the event becomes a refresh.
const MIN_REFLECT_NORM: f64 = 1e-14;

enum Next {
    Bounce { tau: f64, xp: DVector<f64>, grad: DVector<f64>, true_rate: f64, bound: f64 },
    Refresh,
    End,
}

/// Bouncy Particle sampler with scalar corrected thinning and velocity refreshment.
///
/// Failure handling matches [`super::zigzag_run`]. Refresh events are recorded in the
/// skeleton alongside accepted bounces.
pub fn bps_run<P: Potential + ?Sized>(
    tp: &P,
    surrogate: &mut Surrogate,
    x0: &DVector<f64>,
    opts: &PdmpOptions,
) -> Result<Skeleton> {
    opts.validate(true)?;
    let d = tp.dim();
    check_dim(d, x0.len())?;
    check_dim(d, surrogate.dim())?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: DVector<f64> = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let mut xi = x0.clone();
    let mut gamma = surrogate.initial_offset();
    let mut t = 0.0;
    let mut sk = Skeleton::new(xi.clone(), v.clone());
    let big_t = opts.final_time;

    'outer: while t < big_t {
        if opts.budget_reached(tp.evaluations()) {
            break;
        }
        surrogate.refresh_model();
        surrogate.begin_attempt();
        let remaining = big_t - t;
        let e_ref: f64 = rng.sample(Exp1);
        let tau_ref = e_ref / opts.lambda_ref;
        let e_b: f64 = rng.sample(Exp1);
        let horizon = remaining.min(tau_ref);

        let mut corrections = 0u64;
        let next = loop {
            let tau_b = match candidate_time(surrogate.directional_ray(&xi, &v), gamma, e_b, horizon) {
                Ok(tau) => tau,
                Err(e) => {
                    sk.stats.aborted = Some(e.to_string());
                    break 'outer;
                }
            };
            let Some(tau_b) = tau_b.filter(|&tb| tb <= tau_ref) else {
                break if tau_ref < remaining { Next::Refresh } else { Next::End };
            };
            if opts.budget_reached(tp.evaluations()) {
                break 'outer;
            }
            let xp = &xi + &v * tau_b;
            let grad = match true_gradient(tp, surrogate, &xp) {
                Ok(g) => g,
                Err(e) => {
                    sk.stats.aborted = Some(e.to_string());
                    break 'outer;
                }
            };
            let true_rate = v.dot(&grad).max(0.0);
            let bound = (v.dot(&surrogate.gradient(&xp)?) + gamma).max(0.0);
            let delta = true_rate - bound;
            if delta <= 0.0 {
                break Next::Bounce { tau: tau_b, xp, grad, true_rate, bound };
            }
            gamma += delta;
            corrections += 1;
            sk.stats.corrections += 1;
            sk.stats.max_corrections_per_attempt = sk.stats.max_corrections_per_attempt.max(corrections);
            if corrections >= opts.correction_cap {
                sk.stats.aborted = Some(format!("{corrections} offset corrections in one attempt at t = {t:.6e}"));
                break 'outer;
            }
        };

        let dt = match next {
            Next::End => {
                xi += &v * remaining;
                t = big_t;
                break;
            }
            Next::Refresh => {
                t += tau_ref;
                xi += &v * tau_ref;
                v = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
                sk.stats.refreshes += 1;
                sk.push(t, xi.clone(), v.clone(), EventKind::Refresh);
                tau_ref
            }
            Next::Bounce { tau, xp, grad, true_rate, bound } => {
                t += tau;
                xi = xp;
                sk.stats.candidates += 1;
                let ratio = if bound > 0.0 { true_rate / bound } else { 0.0 };
                sk.stats.max_ratio = sk.stats.max_ratio.max(ratio);
                let u: f64 = rng.gen();
                if u < ratio {
                    sk.stats.accepted += 1;
                    let g2 = grad.norm_squared();
                    if g2.sqrt() < MIN_REFLECT_NORM {
                        v = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
                        sk.stats.refreshes += 1;
                        sk.push(t, xi.clone(), v.clone(), EventKind::Refresh);
                    } else {
                        v -= &grad * (2.0 * v.dot(&grad) / g2);
                        sk.push(t, xi.clone(), v.clone(), EventKind::Bounce);
                    }
                }
                tau
            }
        };
        gamma *= (-opts.beta * dt).exp();
        sk.cost_trace.push((t, tp.evaluations()));
        if !finite(&xi) {
            sk.stats.aborted = Some("non-finite position".into());
            break;
        }
    }
    sk.final_time = t;
    Ok(sk)
}
