//! Quasi-Newton minimization with a backtracking line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Largest allowed step length in parameter space.
    pub max_step: f64,
    /// Stop once the relative decrease stays below this for [`STALL_ITERATIONS`] steps (0 disables).
    pub f_tol: f64,
}

/// Consecutive small-decrease iterations that count as a stall.
pub const STALL_ITERATIONS: usize = 5;

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-8,
            max_step: 10.0,
            f_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `objective`, which returns `(value, gradient)` or `None` outside its domain.
///
/// Never fails: the best iterate found is returned with `converged` set accordingly.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let (mut f, mut g) = objective(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh_metric = true;
    let mut iterations = 0;
    let mut stalled = 0;

    while iterations < opts.max_iterations {
        let gnorm = g.norm();
        if gnorm < opts.grad_tol {
            return Some(BfgsOutcome { x, value: f, grad_norm: gnorm, iterations, converged: true });
        }
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh_metric = true;
            dir = -g.clone();
        }
        let dnorm = dir.norm();
        if dnorm > opts.max_step {
            dir *= opts.max_step / dnorm;
        }

        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = objective(&trial) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                    let armijo = ft <= f + 1e-4 * step * slope;
                    // Near the optimum, function differences drown in round-off; fall back
                    // to gradient decrease with a non-increasing value.
                    let flat = ft <= f + 1e-12 * (1.0 + f.abs()) && gt.norm() < gnorm;
                    if armijo || flat {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        iterations += 1;
        match accepted {
            Some((xn, fn_, gn)) => {
                let s = &xn - &x;
                let y = &gn - &g;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
                    if fresh_metric {
                        // Scale the initial inverse Hessian by the observed curvature.
                        h_inv *= sy / y.dot(&y);
                        fresh_metric = false;
                    }
                    let rho = 1.0 / sy;
                    let hy = &h_inv * &y;
                    let yhy = y.dot(&hy);
                    // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
                    h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
                    h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
                }
                let decrease = f - fn_;
                x = xn;
                f = fn_;
                g = gn;
                if decrease <= opts.f_tol * (1.0 + f.abs()) {
                    stalled += 1;
                    if stalled >= STALL_ITERATIONS {
                        break;
                    }
                } else {
                    stalled = 0;
                }
            }
            None => {
                if fresh_metric {
                    break;
                }
                h_inv = DMatrix::identity(n, n);
                fresh_metric = true;
            }
        }
    }
    let grad_norm = g.norm();
    Some(BfgsOutcome {
        x,
        value: f,
        grad_norm,
        iterations,
        converged: grad_norm < opts.grad_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_converges() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Some((v, g))
        };
        let out = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &BfgsOptions::default()).unwrap();
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_restart_is_immediate() {
        let f = |x: &DVector<f64>| {
            let g = DVector::from_vec(vec![2.0 * (x[0] - 3.0), 8.0 * (x[1] + 1.0)]);
            Some(((x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2), g))
        };
        let opts = BfgsOptions::default();
        let out = minimize(f, DVector::zeros(2), &opts).unwrap();
        assert!(out.converged);
        let again = minimize(f, out.x.clone(), &opts).unwrap();
        assert!(again.iterations <= 2);
    }
}
