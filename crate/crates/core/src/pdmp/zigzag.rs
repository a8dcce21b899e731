use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::{candidate_time, finite, EventKind, PdmpOptions, Skeleton};
use crate::error::{check_dim, Result};
use crate::potential::Potential;
use crate::surrogate::Surrogate;

/// Zig-Zag sampler with component-wise corrected thinning.
///
/// Sampler failures (correction cap, exhausted candidate search, non-finite potential)
/// do not return an error: the skeleton up to that point is returned with
/// `stats.aborted` set.
pub fn zigzag_run<P: Potential + ?Sized>(
    tp: &P,
    surrogate: &mut Surrogate,
    x0: &DVector<f64>,
    opts: &PdmpOptions,
) -> Result<Skeleton> {
    opts.validate(false)?;
    let d = tp.dim();
    check_dim(d, x0.len())?;
    check_dim(d, surrogate.dim())?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = DVector::from_fn(d, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 });
    let mut xi = x0.clone();
    let mut gamma = vec![surrogate.initial_offset(); d];
    let mut t = 0.0;
    let mut sk = Skeleton::new(xi.clone(), v.clone());
    let mut taus: Vec<Option<f64>> = vec![None; d];
    let mut budgets = vec![0.0; d];
    let big_t = opts.final_time;

    'outer: while t < big_t {
        if opts.budget_reached(tp.evaluations()) {
            break;
        }
        surrogate.refresh_model();
        surrogate.begin_attempt();
        let horizon = big_t - t;
        for i in 0..d {
            budgets[i] = rng.sample(Exp1);
            taus[i] = match candidate_time(surrogate.component_ray(&xi, &v, i), gamma[i], budgets[i], horizon) {
                Ok(tau) => tau,
                Err(e) => {
                    sk.stats.aborted = Some(e.to_string());
                    break 'outer;
                }
            };
        }

        let mut corrections = 0u64;
        let (tau, i_star, xp, true_rate, bound) = loop {
            let winner = taus
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (i, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((i_star, tau)) = winner else {
                if horizon.is_infinite() {
                    sk.stats.aborted = Some(format!("no event candidate on an unbounded horizon at t = {t:.6e}"));
                    break 'outer;
                }
                // No candidate before the final time: drift to the end.
                xi += &v * horizon;
                t = big_t;
                break 'outer;
            };
            if opts.budget_reached(tp.evaluations()) {
                break 'outer;
            }
            let xp = &xi + &v * tau;
            let grad = match true_gradient(tp, surrogate, &xp) {
                Ok(g) => g,
                Err(e) => {
                    sk.stats.aborted = Some(e.to_string());
                    break 'outer;
                }
            };
            let true_rate = (v[i_star] * grad[i_star]).max(0.0);
            let bound = (v[i_star] * surrogate.partial(&xp, i_star) + gamma[i_star]).max(0.0);
            let delta = true_rate - bound;
            if delta <= 0.0 {
                break (tau, i_star, xp, true_rate, bound);
            }
            gamma[i_star] += delta;
            corrections += 1;
            sk.stats.corrections += 1;
            sk.stats.max_corrections_per_attempt = sk.stats.max_corrections_per_attempt.max(corrections);
            if corrections >= opts.correction_cap {
                sk.stats.aborted = Some(format!(
                    "{corrections} offset corrections in one attempt at t = {t:.6e} (component {})",
                    i_star + 1
                ));
                break 'outer;
            }
            taus[i_star] = match candidate_time(
                surrogate.component_ray(&xi, &v, i_star),
                gamma[i_star],
                budgets[i_star],
                horizon,
            ) {
                Ok(tau) => tau,
                Err(e) => {
                    sk.stats.aborted = Some(e.to_string());
                    break 'outer;
                }
            };
        };

        t += tau;
        xi = xp;
        sk.stats.candidates += 1;
        let ratio = if bound > 0.0 { true_rate / bound } else { 0.0 };
        sk.stats.max_ratio = sk.stats.max_ratio.max(ratio);
        let u: f64 = rng.gen();
        if u < ratio {
            v[i_star] = -v[i_star];
            sk.stats.accepted += 1;
            sk.push(t, xi.clone(), v.clone(), EventKind::Flip(i_star));
        }
        let decay = (-opts.beta * tau).exp();
        gamma.iter_mut().for_each(|g| *g *= decay);
        sk.cost_trace.push((t, tp.evaluations()));
        if !finite(&xi) {
            sk.stats.aborted = Some("non-finite position".into());
            break;
        }
    }
    sk.final_time = t;
    Ok(sk)
}

/// True gradient at `x`, feeding the adaptive surrogate when it collects data.
pub(crate) fn true_gradient<P: Potential + ?Sized>(tp: &P, surrogate: &mut Surrogate, x: &DVector<f64>) -> Result<DVector<f64>> {
    if surrogate.wants_observations() {
        let (value, grad) = tp.value_and_gradient(x)?;
        surrogate.observe(x, value, &grad);
        Ok(grad)
    } else {
        tp.gradient(x)
    }
}
