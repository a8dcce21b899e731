use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssReport {
    /// Minimum over coordinates.
    pub min: f64,
    pub per_coordinate: Vec<f64>,
    /// Set when some coordinate of the chain is constant; its ESS is reported as 1.
    pub degenerate: bool,
}

/// Effective sample size of one scalar chain with Geyer's initial positive sequence.
///
/// Returns `(ess, degenerate)`; the result is clamped to `[1, N]`.
pub fn ess_scalar(x: &[f64]) -> (f64, bool) {
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / nf;
    if !(c0 > 0.0) || !c0.is_finite() {
        return (1.0, true);
    }
    let rho = |k: usize| -> f64 {
        let s: f64 = centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum();
        s / nf / c0
    };
    // τ = −1 + 2 Σ_k Γ_k with Γ_k = ρ_{2k} + ρ_{2k+1}, summed while Γ_k > 0.
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = if k == 0 { 1.0 + rho(1) } else { rho(2 * k) + rho(2 * k + 1) };
        if !(gamma > 0.0) {
            break;
        }
        tau += 2.0 * gamma;
        k += 1;
    }
    ((nf / tau).clamp(1.0, nf), false)
}

/// Per-coordinate ESS of an ordered sample, reduced by the minimum.
pub fn ess(samples: &[DVector<f64>]) -> Result<EssReport> {
    if samples.len() < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 samples, got {}", samples.len())));
    }
    let d = samples[0].len();
    let mut per = Vec::with_capacity(d);
    let mut degenerate = false;
    for i in 0..d {
        let col: Vec<f64> = samples
            .iter()
            .map(|x| check_dim(d, x.len()).map(|_| x[i]))
            .collect::<Result<_>>()?;
        let (e, deg) = ess_scalar(&col);
        per.push(e);
        degenerate |= deg;
    }
    let min = per.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EssReport {
        min,
        per_coordinate: per,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_chain_is_degenerate() {
        let (e, deg) = ess_scalar(&[2.0; 50]);
        assert_eq!(e, 1.0);
        assert!(deg);
    }

    #[test]
    fn alternating_chain_is_clamped() {
        let x: Vec<f64> = (0..100).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (e, _) = ess_scalar(&x);
        assert!((1.0..=100.0).contains(&e));
    }

    #[test]
    fn too_short() {
        let s = vec![DVector::from_element(1, 0.0); 9];
        assert!(ess(&s).is_err());
    }
}
