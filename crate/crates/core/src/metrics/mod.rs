//! Accuracy and efficiency metrics against a reference posterior.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

pub mod ess;
pub mod reference;
pub mod sinkhorn;

pub use ess::{ess, EssReport};
pub use reference::{build_reference, ReferencePosterior, REFERENCE_BURN_IN};
pub use sinkhorn::{sinkhorn_divergence, SinkhornOptions};

fn rmse(est: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
    check_dim(reference.len(), est.len())?;
    if est.is_empty() {
        return Err(Error::InvalidArgument("empty vectors".into()));
    }
    Ok(((est - reference).norm_squared() / est.len() as f64).sqrt())
}

/// Root mean squared error between estimated and reference means.
pub fn rmse_mean(est: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
    rmse(est, reference)
}

/// Root mean squared error between estimated and reference per-coordinate variances.
pub fn rmse_var(est: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
    rmse(est, reference)
}

/// Mean and biased (1/N) variance per coordinate.
pub fn sample_moments(samples: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let d = samples.first().map_or(0, |x| x.len());
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in samples {
        mean += x;
    }
    mean /= n;
    let mut var = DVector::zeros(d);
    for x in samples {
        let r = x - &mean;
        var += r.component_mul(&r);
    }
    var /= n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_mean(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert!((rmse_mean(&v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse_var(&v(&[1.5]), &v(&[1.0])).unwrap(), 0.5);
        let a = rmse_mean(&v(&[1.0, 5.0, -2.0]), &v(&[0.0, 1.0, 2.0])).unwrap();
        let b = rmse_mean(&v(&[-2.0, 1.0, 5.0]), &v(&[2.0, 0.0, 1.0])).unwrap();
        assert_eq!(a, b);
        assert!(rmse_mean(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }
}
