//! Whitening around the posterior mode.
//!
//! With `H = L Lᵀ` the Hessian at the MAP point, the whitened coordinate is
//! `ξ = Lᵀ(x − x_MAP)` and the transformed potential `Ψ̃(ξ) = Ψ(x_MAP + L⁻ᵀ ξ)`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::optim::{self, BfgsOptions};
use crate::potential::Potential;

pub const MAP_TOL: f64 = 1e-8;
pub const MAP_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    map_point: DVector<f64>,
    chol_factor: DMatrix<f64>,
    #[serde(skip)]
    l_inv: DMatrix<f64>,
}

impl AffineMap {
    /// Factorize `hessian` at `map_point`. A Hessian that is not SPD is a hard error.
    pub fn new(map_point: DVector<f64>, hessian: &DMatrix<f64>) -> Result<Self> {
        check_dim(map_point.len(), hessian.nrows())?;
        check_dim(hessian.nrows(), hessian.ncols())?;
        let chol = Cholesky::new(hessian.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Hessian at the MAP point".into()))?;
        Self::from_factor(map_point, chol.l())
    }

    pub fn from_factor(map_point: DVector<f64>, chol_factor: DMatrix<f64>) -> Result<Self> {
        check_dim(map_point.len(), chol_factor.nrows())?;
        let d = map_point.len();
        if (0..d).any(|i| !(chol_factor[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite("factor diagonal must be positive".into()));
        }
        let l_inv = chol_factor
            .clone()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        Ok(Self {
            map_point,
            chol_factor,
            l_inv,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            map_point: DVector::zeros(d),
            chol_factor: DMatrix::identity(d, d),
            l_inv: DMatrix::identity(d, d),
        }
    }

    /// Rebuild the cached inverse after deserialization.
    pub fn restore(self) -> Result<Self> {
        Self::from_factor(self.map_point, self.chol_factor)
    }

    pub fn dim(&self) -> usize {
        self.map_point.len()
    }

    pub fn map_point(&self) -> &DVector<f64> {
        &self.map_point
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_factor
    }

    pub fn to_whitened(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol_factor.tr_mul(&(x - &self.map_point))
    }

    pub fn from_whitened(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.map_point + self.l_inv.tr_mul(xi)
    }

    /// `L⁻¹ g`: gradient in whitened coordinates.
    pub fn pull_gradient(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.l_inv * g
    }

    /// `L⁻¹ H L⁻ᵀ`, symmetrized.
    pub fn pull_hessian(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let m = &self.l_inv * h * self.l_inv.transpose();
        (&m + m.transpose()) * 0.5
    }
}

/// Minimize `p` from `x0` until `‖∇Ψ‖ < tol`.
pub fn find_map<P: Potential + ?Sized>(p: &P, x0: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    check_dim(p.dim(), x0.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let opts = BfgsOptions {
        max_iterations: MAP_MAX_ITERATIONS,
        grad_tol: tol,
        max_step: 10.0,
        f_tol: 0.0,
    };
    let out = optim::minimize(|x| p.value_and_gradient(x).ok(), x0.clone(), &opts)
        .ok_or_else(|| Error::Numeric("potential not finite at the initial point".into()))?;
    if out.converged {
        Ok(out.x)
    } else {
        Err(Error::Optimization {
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            best: out.x,
        })
    }
}

pub fn build_map<P: Potential + ?Sized>(p: &P, x0: &DVector<f64>) -> Result<AffineMap> {
    let x = find_map(p, x0, MAP_TOL)?;
    let h = p.hessian(&x)?;
    AffineMap::new(x, &h)
}

/// `Ψ̃(ξ) = Ψ(x_MAP + L⁻ᵀ ξ)`, sharing the base evaluation counter.
#[derive(Debug, Clone)]
pub struct TransformedPotential<P> {
    base: P,
    map: Arc<AffineMap>,
}

impl<P: Potential> TransformedPotential<P> {
    pub fn new(base: P, map: Arc<AffineMap>) -> Result<Self> {
        check_dim(base.dim(), map.dim())?;
        Ok(Self { base, map })
    }

    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn map(&self) -> &AffineMap {
        &self.map
    }
}

impl<P: Potential> Potential for TransformedPotential<P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, xi: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), xi.len())?;
        self.base.value(&self.map.from_whitened(xi))
    }

    fn gradient(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), xi.len())?;
        Ok(self.map.pull_gradient(&self.base.gradient(&self.map.from_whitened(xi))?))
    }

    fn value_and_gradient(&self, xi: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_dim(self.dim(), xi.len())?;
        let (v, g) = self.base.value_and_gradient(&self.map.from_whitened(xi))?;
        Ok((v, self.map.pull_gradient(&g)))
    }

    fn hessian(&self, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), xi.len())?;
        Ok(self.map.pull_hessian(&self.base.hessian(&self.map.from_whitened(xi))?))
    }

    fn evaluations(&self) -> u64 {
        self.base.evaluations()
    }
}
