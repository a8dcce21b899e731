//! Event-time simulation by inverting the integrated rate along a ray.
//!
//! Given a rate `λ(s) ≥ 0` and an exponential budget `E = −log u`, find the smallest
//! `τ` with `∫_0^τ λ(s) ds = E`.

use crate::error::{Error, Result};

/// Length of one integration window along the ray (whitened units).
pub const WINDOW: f64 = 10.0;
/// Windows searched before a candidate search is declared hopeless.
pub const MAX_WINDOWS: usize = 10_000;
/// Absolute tolerance on the integrated rate.
pub const QUAD_TOL: f64 = 1e-10;
/// Absolute tolerance on the event time.
pub const ROOT_TOL: f64 = 1e-10;

const MAX_DEPTH: u32 = 50;

/// Closed-form inversion for `λ(s) = max{0, a + b s}`.
///
/// Returns `None` when the total mass on `[0, ∞)` is below `budget`.
pub fn invert_affine(a: f64, b: f64, budget: f64) -> Option<f64> {
    if budget <= 0.0 {
        return Some(0.0);
    }
    if b == 0.0 {
        return (a > 0.0).then(|| budget / a);
    }
    if b > 0.0 {
        if a >= 0.0 {
            // b τ²/2 + a τ = E, written to avoid cancellation.
            Some(2.0 * budget / (a + (a * a + 2.0 * b * budget).sqrt()))
        } else {
            Some(-a / b + (2.0 * budget / b).sqrt())
        }
    } else {
        if a <= 0.0 {
            return None;
        }
        let disc = a * a + 2.0 * b * budget;
        (disc > 0.0).then(|| 2.0 * budget / (a + disc.sqrt()))
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

struct Integrator<'a, F: FnMut(f64) -> f64> {
    rate: &'a mut F,
    violation: Option<(f64, f64)>,
}

impl<F: FnMut(f64) -> f64> Integrator<'_, F> {
    fn eval(&mut self, s: f64) -> f64 {
        let v = (self.rate)(s);
        if !(v >= 0.0) && self.violation.is_none() {
            self.violation = Some((s, v));
        }
        if v.is_finite() {
            v.max(0.0)
        } else {
            f64::INFINITY
        }
    }

    /// Adaptive Simpson on `[a, b]`, visiting leaves left to right.
    ///
    /// Each leaf mass is added to `acc`; the walk stops at the first leaf that brings `acc`
    /// to `target` and returns that leaf as `(left, right, mass)`.
    #[allow(clippy::too_many_arguments)]
    fn walk(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
        acc: &mut f64,
        target: f64,
    ) -> Option<(f64, f64, f64)> {
        let m = 0.5 * (a + b);
        let flm = self.eval(0.5 * (a + m));
        let frm = self.eval(0.5 * (m + b));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = left + right - whole;
        if depth >= MAX_DEPTH || err.abs() <= 15.0 * tol || !err.is_finite() {
            let corr = if err.is_finite() { err / 15.0 } else { 0.0 };
            // Split the Richardson correction evenly; keep leaves non-negative.
            for leaf in [(a, m, (left + 0.5 * corr).max(0.0)), (m, b, (right + 0.5 * corr).max(0.0))] {
                *acc += leaf.2;
                if *acc >= target {
                    return Some(leaf);
                }
            }
            return None;
        }
        self.walk(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, acc, target)
            .or_else(|| self.walk(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, acc, target))
    }

    fn integrate(&mut self, a: f64, b: f64, tol: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let fa = self.eval(a);
        let fm = self.eval(0.5 * (a + b));
        let fb = self.eval(b);
        let mut acc = 0.0;
        self.walk(a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 0, &mut acc, f64::INFINITY);
        acc
    }
}

/// Numerical inversion by windowed adaptive quadrature.
///
/// The search runs over `[0, horizon]`; `Ok(None)` means the mass on that interval is
/// below `budget`. If the horizon exceeds `WINDOW · MAX_WINDOWS` and no event is found
/// within that cap, the search aborts with [`Error::SamplerAbort`]. A negative or NaN
/// rate sample is a [`Error::Contract`] violation.
pub fn invert_numeric<F: FnMut(f64) -> f64>(mut rate: F, budget: f64, horizon: f64) -> Result<Option<f64>> {
    if !(budget >= 0.0) {
        return Err(Error::InvalidArgument("exponential budget must be non-negative".into()));
    }
    if budget == 0.0 {
        return Ok(Some(0.0));
    }
    let limit = horizon.min(WINDOW * MAX_WINDOWS as f64);
    let mut integ = Integrator {
        rate: &mut rate,
        violation: None,
    };
    let mut acc = 0.0;
    let mut start = 0.0;
    while start < limit {
        let end = (start + WINDOW).min(limit);
        let (fa, fm, fb) = (integ.eval(start), integ.eval(0.5 * (start + end)), integ.eval(end));
        let whole = simpson(fa, fm, fb, end - start);
        let hit = integ.walk(start, end, fa, fm, fb, whole, QUAD_TOL, 0, &mut acc, budget);
        if let Some((s, v)) = integ.violation {
            return Err(Error::Contract(format!("negative rate {v} at s = {s}")));
        }
        if let Some((a, b, m)) = hit {
            return root_in_leaf(&mut integ, a, b, budget - (acc - m)).map(Some);
        }
        start = end;
    }
    if horizon > limit {
        return Err(Error::SamplerAbort(format!(
            "no event within {MAX_WINDOWS} integration windows"
        )));
    }
    Ok(None)
}

/// Solve `∫_a^τ λ = target` inside a leaf holding at least `target` mass.
fn root_in_leaf<F: FnMut(f64) -> f64>(integ: &mut Integrator<'_, F>, a: f64, b: f64, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (a, b);
    let mut tau = a + (b - a) * 0.5;
    for _ in 0..200 {
        if hi - lo <= ROOT_TOL {
            break;
        }
        let mass = integ.integrate(a, tau, QUAD_TOL);
        let g = mass - target;
        if g < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        // Newton step on Λ(τ) with Λ' = λ, safeguarded by the bracket.
        let slope = integ.eval(tau);
        let newton = if slope > 0.0 { tau - g / slope } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - tau).abs() <= ROOT_TOL {
            tau = next;
            break;
        }
        tau = next;
    }
    if let Some((s, v)) = integ.violation {
        return Err(Error::Contract(format!("negative rate {v} at s = {s}")));
    }
    Ok(tau)
}

/// Smallest `τ ≤ horizon` with `∫_0^τ rate = −log u`, or `None`.
pub fn invert_rate_along_ray<F: FnMut(f64) -> f64>(rate: F, u: f64, horizon: f64) -> Result<Option<f64>> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument(format!("uniform draw {u} outside (0, 1)")));
    }
    invert_numeric(rate, -u.ln(), horizon)
}
