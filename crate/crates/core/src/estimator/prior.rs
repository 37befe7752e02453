use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{Var, VarValue};
use crate::linalg::{asymmetry, min_eigenvalue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("prior matrix is {rows}x{cols} but layout has dimension {dim}")]
    Dimension {
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("prior matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("prior matrix is indefinite (min eigenvalue {0:e})")]
    Indefinite(f64),
    #[error("variable {0:?} appears twice in the prior layout")]
    Duplicate(Var),
    #[error("variable {0:?} is not part of the prior")]
    Missing(Var),
}

/// Quadratic energy `2 b^T delta + delta^T H delta` on the deviation
/// `delta` of its variables from their fixed linearization points.
#[derive(Clone, Debug, PartialEq)]
pub struct MargPrior {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub vars: Vec<Var>,
    /// First-estimate linearization points, one per variable.
    pub lin: Vec<VarValue>,
}

pub const PRIOR_SYMMETRY_TOL: f64 = 1e-10;
pub const PRIOR_EIGEN_FLOOR: f64 = -1e-9;

impl MargPrior {
    pub fn empty() -> Self {
        Self {
            h: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            vars: Vec::new(),
            lin: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vars.iter().map(Var::dim).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.vars.len());
        let mut o = 0;
        for v in &self.vars {
            out.push(o);
            o += v.dim();
        }
        out
    }

    pub fn position(&self, var: &Var) -> Option<usize> {
        self.vars.iter().position(|v| v == var)
    }

    pub fn lin_point(&self, var: &Var) -> Option<&VarValue> {
        self.position(var).map(|i| &self.lin[i])
    }

    /// Checks layout, symmetry and the eigenvalue floor.
    pub fn validate(&self) -> Result<(), PriorError> {
        let dim = self.dim();
        if self.h.nrows() != dim
            || self.h.ncols() != dim
            || self.b.len() != dim
            || self.lin.len() != self.vars.len()
        {
            return Err(PriorError::Dimension {
                rows: self.h.nrows(),
                cols: self.h.ncols(),
                dim,
            });
        }
        for (i, v) in self.vars.iter().enumerate() {
            if self.vars[..i].contains(v) {
                return Err(PriorError::Duplicate(*v));
            }
        }
        if dim == 0 {
            return Ok(());
        }
        let asym = asymmetry(&self.h);
        if asym > PRIOR_SYMMETRY_TOL * self.h.amax().max(1.0) {
            return Err(PriorError::Asymmetric(asym));
        }
        let min = min_eigenvalue(&self.h);
        if min < PRIOR_EIGEN_FLOOR * self.h.amax().max(1.0) {
            return Err(PriorError::Indefinite(min));
        }
        Ok(())
    }

    /// Deviation of `current` values (same order as `vars`) from the
    /// linearization points.
    pub fn delta(&self, current: &[VarValue]) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim());
        let mut o = 0;
        for (c, l) in current.iter().zip(&self.lin) {
            let v = c.boxminus(l).expect("prior layout and values disagree");
            d.rows_mut(o, v.len()).copy_from_slice(&v);
            o += v.len();
        }
        d
    }

    /// Energy and gradient term `b + H delta`.
    pub fn evaluate(&self, current: &[VarValue]) -> (f64, DVector<f64>) {
        let d = self.delta(current);
        let hd = &self.h * &d;
        let e = 2.0 * self.b.dot(&d) + d.dot(&hd);
        (e, &self.b + hd)
    }
}
