//! Synthesis of the unique constraint-preserving feedback `τ*`.
//!
//! With `Y^a = ♯_G f^a`, the closed loop `q̈ = a_drift + τ_a Y^a` keeps
//! `φ = 0` invariant iff `A τ = b`, where
//!
//! ```text
//! A[b][a] = ∂φ^b/∂q̇ · Y^a
//! b[b]    = −(∂φ^b/∂q · q̇ + ∂φ^b/∂q̇ · a_drift)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::constraints::{ConstraintJacobians, ConstraintSet, MANIFOLD_TOLERANCE};
use crate::expr::Params;
use crate::linalg::{norm_inf, norm_inf_mat};
use crate::riemannian::{
    drift_with_metric, ForceCovector, LocalMetric, MetricField, PotentialField, TangentState,
};
use crate::{Error, Result};

/// Largest condition estimate accepted before the state is declared
/// non-transversal.
pub const CONDITION_LIMIT: f64 = 1e12;

/// The data of `∇_q̇ q̇ = Y⁰ + u_a Y^a` together with the constraint it is
/// meant to enforce.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanicalSystem {
    metric: MetricField,
    potential: PotentialField,
    external_force: Option<ForceCovector>,
    control_forces: Vec<ForceCovector>,
    constraints: ConstraintSet,
    params: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub tau: DVector<f64>,
    /// `A`, `m × m`.
    pub matrix: DMatrix<f64>,
    /// `b`.
    pub rhs: DVector<f64>,
    /// `|A τ − b|∞`.
    pub residual: f64,
    /// Componentwise condition estimate of the solve.
    pub condition: f64,
    pub determinant: f64,
    /// Set when the state is not on the constraint manifold; the solution is
    /// still computed but the uniqueness guarantee does not apply.
    pub off_manifold: bool,
}

/// Everything evaluated once per state and shared by the control and
/// multiplier solves.
pub(crate) struct StateEval {
    pub local: LocalMetric,
    pub jac: ConstraintJacobians,
    pub drift: DVector<f64>,
}

impl StateEval {
    /// `∂φ/∂q · q̇ + ∂φ/∂q̇ · a_drift`, the constraint rate of the drift.
    pub fn drift_rate(&self, v: &DVector<f64>) -> DVector<f64> {
        self.jac.rate(v, &self.drift)
    }
}

impl MechanicalSystem {
    pub fn new(
        metric: MetricField,
        potential: PotentialField,
        constraints: ConstraintSet,
        control_forces: Vec<ForceCovector>,
    ) -> Result<Self> {
        let n = metric.dimension();
        if potential.expr().dimension() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: potential.expr().dimension(),
            });
        }
        if constraints.dimension() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: constraints.dimension(),
            });
        }
        if control_forces.len() != constraints.len() {
            return Err(Error::InvalidSystem(format!(
                "{} control forces for {} constraints; the control matrix must be square",
                control_forces.len(),
                constraints.len()
            )));
        }
        if let Some(f) = control_forces.iter().find(|f| f.dimension() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: f.dimension(),
            });
        }
        Ok(MechanicalSystem {
            metric,
            potential,
            external_force: None,
            control_forces,
            constraints,
            params: Params::new(),
        })
    }

    pub fn with_external_force(mut self, force: ForceCovector) -> Result<Self> {
        if force.dimension() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: force.dimension(),
            });
        }
        self.external_force = Some(force);
        Ok(self)
    }

    pub fn with_params(mut self, params: Params) -> Self {
        self.params = params;
        self
    }

    pub fn set_param(&mut self, name: &str, value: f64) {
        self.params.insert(name.to_string(), value);
    }

    pub fn dimension(&self) -> usize {
        self.metric.dimension()
    }

    /// Number of constraints, which equals the number of controls.
    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn external_force(&self) -> Option<&ForceCovector> {
        self.external_force.as_ref()
    }

    pub fn control_forces(&self) -> &[ForceCovector] {
        &self.control_forces
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Every parameter name referenced by any expression of the system.
    pub fn required_parameters(&self) -> Vec<String> {
        let mut names = self.metric.parameters();
        let exprs = std::iter::once(self.potential.expr())
            .chain(self.external_force.iter().flat_map(|f| f.components()))
            .chain(self.control_forces.iter().flat_map(|f| f.components()))
            .chain(self.constraints.exprs());
        for p in exprs.flat_map(|e| e.parameters()) {
            if !names.contains(p) {
                names.push(p.clone());
            }
        }
        names
    }

    /// Fails with the first referenced parameter that has no value.
    pub fn check_parameters(&self) -> Result<()> {
        match self
            .required_parameters()
            .into_iter()
            .find(|p| !self.params.contains_key(p))
        {
            Some(p) => Err(crate::ExprError::UnboundParameter(p).into()),
            None => Ok(()),
        }
    }

    /// Control covectors `f^a` evaluated at `s`, one per row.
    pub fn control_covectors(&self, s: &TangentState) -> Result<DMatrix<f64>> {
        let n = self.dimension();
        let mut f = DMatrix::zeros(self.control_forces.len(), n);
        for (a, force) in self.control_forces.iter().enumerate() {
            f.set_row(a, &force.evaluate(s, &self.params)?.transpose());
        }
        Ok(f)
    }

    /// Input vector fields `Y^a = ♯_G f^a` as the columns of an `n × m` matrix.
    pub fn input_fields(&self, s: &TangentState) -> Result<DMatrix<f64>> {
        s.check_dimension(self.dimension())?;
        let local = self.metric.at(&s.q, &self.params)?;
        Ok(local.sharp_rows(&self.control_covectors(s)?))
    }

    pub(crate) fn evaluate_state(&self, s: &TangentState) -> Result<StateEval> {
        s.check_dimension(self.dimension())?;
        let local = self.metric.at(&s.q, &self.params)?;
        let jac = self.constraints.evaluate(s, &self.params)?;
        let drift = drift_with_metric(self, s, &local)?;
        Ok(StateEval { local, jac, drift })
    }
}

/// `A[b][a] = Σ_i (∂φ^b/∂v_i)(G⁻¹ f^a)_i`.
pub fn control_matrix(sys: &MechanicalSystem, s: &TangentState) -> Result<DMatrix<f64>> {
    let jac = sys.constraints.evaluate(s, &sys.params)?;
    Ok(&jac.dv * sys.input_fields(s)?)
}

/// `b = −(∂φ/∂q · v + ∂φ/∂v · a_drift)`.
pub fn control_rhs(sys: &MechanicalSystem, s: &TangentState) -> Result<DVector<f64>> {
    let eval = sys.evaluate_state(s)?;
    Ok(-eval.drift_rate(&s.v))
}

/// Solves `A τ = b` for the unique feedback at `s`.
pub fn synthesize(sys: &MechanicalSystem, s: &TangentState) -> Result<ControlSolution> {
    let eval = sys.evaluate_state(s)?;
    synthesize_with(sys, s, &eval)
}

pub(crate) fn synthesize_with(
    sys: &MechanicalSystem,
    s: &TangentState,
    eval: &StateEval,
) -> Result<ControlSolution> {
    let y = eval.local.sharp_rows(&sys.control_covectors(s)?);
    let a = &eval.jac.dv * &y;
    let rhs = -eval.drift_rate(&s.v);
    let a_abs = eval.jac.dv.abs() * y.abs();

    let lu = a.clone().lu();
    let determinant = lu.determinant();
    let singular = |condition: f64| Error::TransversalityViolation {
        condition,
        reason: format!("control matrix is singular at t = {}", s.t),
    };
    let inverse = match lu.try_inverse() {
        Some(inv) if inv.iter().all(|x| x.is_finite()) => inv,
        _ => return Err(singular(f64::INFINITY)),
    };
    let condition = skeel_condition(&inverse, &a_abs);
    if !condition.is_finite() || determinant == 0.0 {
        return Err(singular(f64::INFINITY));
    }
    if condition > CONDITION_LIMIT {
        return Err(Error::TransversalityViolation {
            condition,
            reason: format!(
                "condition estimate exceeds {CONDITION_LIMIT:e} at t = {}",
                s.t
            ),
        });
    }

    let mut tau = lu.solve(&rhs).ok_or_else(|| singular(condition))?;
    let mut residual = norm_inf(&(&a * &tau - &rhs));
    if residual > 1e-10 * norm_inf(&rhs).max(1.0) {
        // one step of iterative refinement
        if let Some(delta) = lu.solve(&(&rhs - &a * &tau)) {
            let refined = &tau + delta;
            let r = norm_inf(&(&a * &refined - &rhs));
            if r < residual {
                tau = refined;
                residual = r;
            }
        }
    }

    let scale = sys.constraints.scales(s, &sys.params)?;
    let off_manifold = eval
        .jac
        .value
        .iter()
        .zip(scale.iter())
        .any(|(v, sc)| v.abs() > MANIFOLD_TOLERANCE * sc);

    Ok(ControlSolution {
        tau,
        matrix: a,
        rhs,
        residual,
        condition,
        determinant,
        off_manifold,
    })
}

/// `‖ |A⁻¹| |dv| |Y| ‖∞`: sensitivity of `τ` to relative perturbations of
/// the individual products that make up `A`. Unlike the normwise condition
/// number it does not collapse to 1 for a `1 × 1` system.
fn skeel_condition(inverse: &DMatrix<f64>, a_abs: &DMatrix<f64>) -> f64 {
    norm_inf_mat(&(inverse.abs() * a_abs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    pub(crate) fn cone(a: f64) -> MechanicalSystem {
        let e = |s: &str| Expr::parse(s, 3, &["a", "g"]).unwrap();
        let phi = ConstraintSet::new(vec![e("a^2*(v[0]^2+v[1]^2) - v[2]^2")], 3).unwrap();
        let f = ForceCovector::new(vec![e("q[0]"), e("q[1]"), e("1")]).unwrap();
        MechanicalSystem::new(
            MetricField::identity(3),
            PotentialField::new(e("g*q[2]")).unwrap(),
            phi,
            vec![f],
        )
        .unwrap()
        .with_params([("a".into(), a), ("g".into(), 9.81)].into())
    }

    fn state(q: &[f64], v: &[f64]) -> TangentState {
        TangentState::new(q.to_vec(), v.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn cone_example() {
        let sys = cone(1.0);
        let s = state(&[2.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        assert_eq!(control_matrix(&sys, &s).unwrap()[(0, 0)], 2.0);
        assert_eq!(control_rhs(&sys, &s).unwrap()[0], -19.62);
        let sol = synthesize(&sys, &s).unwrap();
        assert!((sol.tau[0] + 9.81).abs() < 1e-14);
        assert!(!sol.off_manifold);
        assert!(sol.residual <= 1e-10 * 19.62);
    }

    #[test]
    fn cone_pole_is_a_transversality_violation() {
        let sys = cone(1.0);
        let s = state(&[1.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        assert_eq!(control_matrix(&sys, &s).unwrap()[(0, 0)], 0.0);
        assert!(matches!(
            synthesize(&sys, &s),
            Err(Error::TransversalityViolation { .. })
        ));
    }

    #[test]
    fn near_pole_exceeds_condition_limit() {
        let sys = cone(1.0);
        // denominator x ẋ − ż = 1e-14 with terms of order 1
        let x = 1.0 + 1e-14;
        let s = state(&[x, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        match synthesize(&sys, &s) {
            Err(Error::TransversalityViolation { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn off_manifold_synthesis_is_flagged() {
        let sys = cone(1.0);
        let sol = synthesize(&sys, &state(&[2.0, 0.0, 0.0], &[1.0, 0.0, 3.0])).unwrap();
        assert!(sol.off_manifold);
    }

    #[test]
    fn unactuated_unforced_rhs_is_zero() {
        let e = |s: &str| Expr::parse(s, 2, &[]).unwrap();
        let sys = MechanicalSystem::new(
            MetricField::identity(2),
            PotentialField::zero(2),
            ConstraintSet::new(vec![e("v[0]^2 + v[1]^2 - 1")], 2).unwrap(),
            vec![ForceCovector::new(vec![e("v[0]"), e("v[1]")]).unwrap()],
        )
        .unwrap();
        let s = state(&[0.3, 0.4], &[0.6, 0.8]);
        assert_eq!(control_rhs(&sys, &s).unwrap()[0], 0.0);
        assert_eq!(synthesize(&sys, &s).unwrap().tau[0], 0.0);
    }

    #[test]
    fn construction_checks() {
        let e = |s: &str| Expr::parse(s, 3, &[]).unwrap();
        let r = MechanicalSystem::new(
            MetricField::identity(3),
            PotentialField::zero(3),
            ConstraintSet::new(vec![e("v[0]")], 3).unwrap(),
            vec![],
        );
        assert!(r.is_err());
        let sys = cone(1.0).with_params(Params::new());
        assert_eq!(
            sys.required_parameters(),
            vec!["g".to_string(), "a".to_string()]
        );
        assert!(sys.check_parameters().is_err());
    }
}
