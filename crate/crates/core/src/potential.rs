//! Evaluatable potentials (negative log target densities) and model-evaluation accounting.
//!
//! Every potential owns an [`EvalCounter`]. The counter increments once per distinct query
//! point: a value, gradient and Hessian request issued back to back at bit-identical inputs
//! is charged as a single model evaluation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Monotone counter of true-model evaluations.
#[derive(Debug, Default)]
pub struct EvalCounter {
    count: AtomicU64,
    last: Mutex<Option<DVector<f64>>>,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Charge an evaluation at `x` unless `x` equals the previously charged point bit for bit.
    pub fn record(&self, x: &DVector<f64>) {
        let mut last = self.last.lock().expect("eval counter lock poisoned");
        let same = last
            .as_ref()
            .is_some_and(|p| p.len() == x.len() && p.iter().zip(x.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        if !same {
            self.count.fetch_add(1, Ordering::SeqCst);
            *last = Some(x.clone());
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }
}

pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Number of model evaluations charged so far.
    fn evaluations(&self) -> u64;
}

impl<P: Potential + ?Sized> Potential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        (**self).value_and_gradient(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        (**self).hessian(x)
    }
    fn evaluations(&self) -> u64 {
        (**self).evaluations()
    }
}

impl<P: Potential + ?Sized> Potential for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        (**self).value_and_gradient(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        (**self).hessian(x)
    }
    fn evaluations(&self) -> u64 {
        (**self).evaluations()
    }
}

/// `½ (x − μ)ᵀ P (x − μ)` for a symmetric positive-definite precision `P`.
#[derive(Debug)]
pub struct GaussianPotential {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    counter: EvalCounter,
}

impl GaussianPotential {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != precision.ncols() {
            return Err(Error::InvalidArgument("precision must be square".into()));
        }
        check_dim(mean.len(), precision.nrows())?;
        Ok(Self {
            mean,
            precision,
            counter: EvalCounter::new(),
        })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            precision: DMatrix::identity(d, d),
            counter: EvalCounter::new(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Same target with a fresh evaluation counter.
    pub fn fresh(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            precision: self.precision.clone(),
            counter: EvalCounter::new(),
        }
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.counter.record(x);
        let r = x - &self.mean;
        Ok(0.5 * r.dot(&(&self.precision * &r)))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        self.counter.record(x);
        Ok(&self.precision * (x - &self.mean))
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_dim(self.dim(), x.len())?;
        self.counter.record(x);
        let r = x - &self.mean;
        let g = &self.precision * &r;
        Ok((0.5 * r.dot(&g), g))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        self.counter.record(x);
        Ok(self.precision.clone())
    }

    fn evaluations(&self) -> u64 {
        self.counter.count()
    }
}
