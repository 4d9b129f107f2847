//! The constraint submanifold `M = φ⁻¹(0) ⊂ TQ`.

use nalgebra::{DMatrix, DVector};

use crate::expr::{Expr, Params};
use crate::linalg::{numerical_rank, singular_values, RANK_THRESHOLD};
use crate::riemannian::TangentState;
use crate::{Error, Result};

/// Default iteration cap for [`ConstraintSet::project_to_manifold`].
pub const DEFAULT_PROJECTION_ITERATIONS: usize = 50;

/// Relative residual below which a state counts as lying on `M`.
pub const MANIFOLD_TOLERANCE: f64 = 1e-9;

/// `m` velocity-level constraints `φ^b(q, q̇)` with `m < n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    phi: Vec<Expr>,
    dimension: usize,
}

/// Value and first derivatives of all constraints at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintJacobians {
    pub value: DVector<f64>,
    /// `∂φ^b/∂q^i`, `m × n`.
    pub dq: DMatrix<f64>,
    /// `∂φ^b/∂q̇^i`, `m × n`.
    pub dv: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularity {
    pub rank: usize,
    pub smallest_singular_value: f64,
}

impl ConstraintJacobians {
    /// Time derivative of `φ` along a field with the given acceleration:
    /// `∂φ/∂q · v + ∂φ/∂q̇ · a`.
    pub fn rate(&self, v: &DVector<f64>, acceleration: &DVector<f64>) -> DVector<f64> {
        &self.dq * v + &self.dv * acceleration
    }
}

impl ConstraintSet {
    pub fn new(phi: Vec<Expr>, dimension: usize) -> Result<Self> {
        let m = phi.len();
        if m == 0 {
            return Err(Error::InvalidSystem(
                "at least one constraint is required".into(),
            ));
        }
        if m >= dimension {
            return Err(Error::InvalidSystem(format!(
                "{m} constraints on a {dimension}-dimensional system violates m < n"
            )));
        }
        for e in &phi {
            if e.dimension() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    got: e.dimension(),
                });
            }
            if !e.uses_velocity() {
                return Err(Error::InvalidSystem(format!(
                    "constraint `{}` does not involve velocities",
                    e.source()
                )));
            }
        }
        Ok(ConstraintSet { phi, dimension })
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.phi
    }

    pub fn evaluate(&self, s: &TangentState, params: &Params) -> Result<ConstraintJacobians> {
        s.check_dimension(self.dimension)?;
        let (m, n) = (self.len(), self.dimension);
        let mut out = ConstraintJacobians {
            value: DVector::zeros(m),
            dq: DMatrix::zeros(m, n),
            dv: DMatrix::zeros(m, n),
        };
        for (b, e) in self.phi.iter().enumerate() {
            let d = e.eval_with_gradient(s.q.as_slice(), s.v.as_slice(), params)?;
            out.value[b] = d.value;
            for i in 0..n {
                out.dq[(b, i)] = d.dq()[i];
                out.dv[(b, i)] = d.dv()[i];
            }
        }
        Ok(out)
    }

    /// Per-constraint residual scale `max(1, largest additive term)`.
    pub fn scales(&self, s: &TangentState, params: &Params) -> Result<DVector<f64>> {
        s.check_dimension(self.dimension)?;
        let mut out = DVector::zeros(self.len());
        for (slot, e) in out.iter_mut().zip(&self.phi) {
            *slot = e
                .term_magnitude(s.q.as_slice(), s.v.as_slice(), params)?
                .max(1.0);
        }
        Ok(out)
    }

    /// `max_b |φ^b| / scale_b`.
    pub fn relative_residual(&self, s: &TangentState, params: &Params) -> Result<f64> {
        let value = self.evaluate(s, params)?.value;
        let scale = self.scales(s, params)?;
        Ok(value
            .iter()
            .zip(scale.iter())
            .fold(0.0, |acc, (v, sc)| acc.max(v.abs() / sc)))
    }

    pub fn on_manifold(&self, s: &TangentState, params: &Params, tol: f64) -> Result<bool> {
        if !(tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(self.relative_residual(s, params)? <= tol)
    }

    /// Rank of the full `m × 2n` differential `[∂φ/∂q | ∂φ/∂q̇]`.
    pub fn regularity(&self, s: &TangentState, params: &Params) -> Result<Regularity> {
        let jac = self.evaluate(s, params)?;
        let full = stack_columns(&jac.dq, &jac.dv);
        let sv = singular_values(&full);
        Ok(Regularity {
            rank: numerical_rank(&full, RANK_THRESHOLD),
            smallest_singular_value: sv.last().copied().unwrap_or(0.0),
        })
    }

    /// Gauss–Newton on the velocities, `v ← v − dvᵀ (dv dvᵀ)⁻¹ φ`, with the
    /// configuration untouched.
    pub fn project_to_manifold(
        &self,
        s: &TangentState,
        params: &Params,
        max_iter: usize,
        tol: f64,
    ) -> Result<TangentState> {
        let m = self.len();
        let mut out = s.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..=max_iter {
            let jac = self.evaluate(&out, params)?;
            let scale = self.scales(&out, params)?;
            residual = jac
                .value
                .iter()
                .zip(scale.iter())
                .fold(0.0, |acc, (v, sc)| acc.max(v.abs() / sc));
            if residual <= tol {
                return Ok(out);
            }
            let rank = numerical_rank(&jac.dv, RANK_THRESHOLD);
            if rank < m {
                return Err(Error::ConstraintDegeneracy { rank, expected: m });
            }
            let gram = &jac.dv * jac.dv.transpose();
            let y = gram
                .cholesky()
                .ok_or(Error::ConstraintDegeneracy { rank, expected: m })?
                .solve(&jac.value);
            out.v -= jac.dv.transpose() * y;
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual,
        })
    }
}

pub(crate) fn stack_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut full = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    full.columns_mut(0, a.ncols()).copy_from(a);
    full.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    full
}
