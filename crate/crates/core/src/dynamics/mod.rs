//! Closed-loop and nonholonomic vector fields, their integration, and the
//! comparison between the two.

pub mod integrate;
pub mod record;

use nalgebra::{DMatrix, DVector};

use crate::constraints::stack_columns;
use crate::control::{synthesize_with, MechanicalSystem};
use crate::linalg::{norm_inf, norm_one, numerical_rank, RANK_THRESHOLD};
use crate::riemannian::TangentState;
use crate::{Error, Result};

pub use integrate::{rk4_integrate, FieldSample, Observation, StepPlan};
pub use record::{Halt, TrajectoryRecord};

/// Relative singular-value threshold of the span-equality test.
pub const SPAN_THRESHOLD: f64 = 1e-8;

/// Chetaev multipliers at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSolution {
    pub lambda: DVector<f64>,
    /// `W = (∂φ/∂v) G⁻¹ (∂φ/∂v)ᵀ`.
    pub gram: DMatrix<f64>,
}

/// `(v, a_drift + τ*_a Y^a)`.
pub fn closed_loop_field(
    sys: &MechanicalSystem,
    s: &TangentState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok((s.v.clone(), closed_loop_sample(sys, s)?.0.acceleration))
}

fn closed_loop_sample(sys: &MechanicalSystem, s: &TangentState) -> Result<(FieldSample, f64)> {
    let eval = sys.evaluate_state(s)?;
    let sol = synthesize_with(sys, s, &eval)?;
    let y = eval.local.sharp_rows(&sys.control_covectors(s)?);
    let acceleration = &eval.drift + &y * &sol.tau;
    Ok((
        FieldSample {
            acceleration,
            signal: sol.tau,
            condition: sol.condition,
            residual: sol.residual,
        },
        sol.determinant,
    ))
}

/// Solves `W λ = −(∂φ/∂q · v + ∂φ/∂v · a_drift)`.
pub fn chetaev_multipliers(sys: &MechanicalSystem, s: &TangentState) -> Result<MultiplierSolution> {
    Ok(multipliers(sys, s)?.0)
}

struct MultiplierParts {
    reaction: DVector<f64>,
    drift: DVector<f64>,
    residual: f64,
    condition: f64,
}

fn multipliers(
    sys: &MechanicalSystem,
    s: &TangentState,
) -> Result<(MultiplierSolution, MultiplierParts)> {
    let eval = sys.evaluate_state(s)?;
    let m = sys.constraint_count();
    let rank = numerical_rank(&eval.jac.dv, RANK_THRESHOLD);
    if rank < m {
        return Err(Error::ConstraintDegeneracy { rank, expected: m });
    }
    let directions = eval.local.sharp_rows(&eval.jac.dv);
    let gram = &eval.jac.dv * &directions;
    let rhs = -eval.drift_rate(&s.v);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::ConstraintDegeneracy { rank, expected: m })?;
    let lambda = chol.solve(&rhs);
    let residual = norm_inf(&(&gram * &lambda - &rhs));
    let condition = norm_one(&gram) * norm_one(&chol.inverse());
    let reaction = &directions * &lambda;
    Ok((
        MultiplierSolution { lambda, gram },
        MultiplierParts {
            reaction,
            drift: eval.drift,
            residual,
            condition,
        },
    ))
}

/// `(v, a_drift + λ_a G⁻¹ ∂φ^a/∂v)`.
pub fn nonholonomic_field(
    sys: &MechanicalSystem,
    s: &TangentState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (_, parts) = multipliers(sys, s)?;
    Ok((s.v.clone(), parts.drift + parts.reaction))
}

fn nonholonomic_sample(sys: &MechanicalSystem, s: &TangentState) -> Result<FieldSample> {
    let (sol, parts) = multipliers(sys, s)?;
    Ok(FieldSample {
        acceleration: parts.drift + parts.reaction,
        signal: sol.lambda,
        condition: parts.condition,
        residual: parts.residual,
    })
}

/// `(total, kinetic)` with kinetic `½ vᵀ G(q) v`.
pub fn energies(sys: &MechanicalSystem, s: &TangentState) -> Result<(f64, f64)> {
    s.check_dimension(sys.dimension())?;
    let g = sys.metric().metric_at(&s.q, sys.params())?;
    let kinetic = 0.5 * s.v.dot(&(&g * &s.v));
    let potential = sys.potential().value(&s.q, sys.params())?;
    Ok((kinetic + potential, kinetic))
}

/// Whether the control covectors `f^a` and the constraint covectors
/// `∂φ^a/∂q̇ dq` span the same `m`-dimensional space at `s`.
pub fn proposition4_check(sys: &MechanicalSystem, s: &TangentState) -> Result<bool> {
    let m = sys.constraint_count();
    let f = sys.control_covectors(s)?;
    let dv = sys.constraints().evaluate(s, sys.params())?.dv;
    if numerical_rank(&f, SPAN_THRESHOLD) != m || numerical_rank(&dv, SPAN_THRESHOLD) != m {
        return Ok(false);
    }
    let stacked = stack_columns(&f.transpose(), &dv.transpose()).transpose();
    Ok(numerical_rank(&stacked, SPAN_THRESHOLD) == m)
}

fn observer(sys: &MechanicalSystem) -> impl FnMut(&TangentState) -> Result<Observation> + '_ {
    move |s| {
        let phi = sys.constraints().evaluate(s, sys.params())?.value;
        let (energy, kinetic) = energies(sys, s)?;
        Ok(Observation {
            phi,
            energy,
            kinetic,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimulationOptions {
    /// Project the velocity back onto `M` after every step.
    pub project_each_step: bool,
}

fn run<F>(
    sys: &MechanicalSystem,
    s0: &TangentState,
    plan: StepPlan,
    options: SimulationOptions,
    field: F,
) -> Result<TrajectoryRecord>
where
    F: FnMut(&TangentState) -> Result<FieldSample>,
{
    let project = |s: &TangentState| {
        sys.constraints().project_to_manifold(
            s,
            sys.params(),
            crate::constraints::DEFAULT_PROJECTION_ITERATIONS,
            1e-14,
        )
    };
    let post: Option<integrate::PostStep<'_>> = if options.project_each_step {
        Some(&project)
    } else {
        None
    };
    rk4_integrate(field, observer(sys), s0, plan, post)
}

/// Integrates the closed loop. The control is re-synthesized at every stage.
///
/// Besides the condition limit, a change of sign of `det A` relative to the
/// initial state is treated as a transversality violation: it means a stage
/// point lies across a pole of the feedback even if no evaluated point is
/// close enough to it to be ill-conditioned.
pub fn simulate_closed_loop(
    sys: &MechanicalSystem,
    s0: &TangentState,
    plan: StepPlan,
    options: SimulationOptions,
) -> Result<TrajectoryRecord> {
    let mut reference_sign: Option<f64> = None;
    let field = move |s: &TangentState| {
        let (sample, det) = closed_loop_sample(sys, s)?;
        let sign = det.signum();
        match reference_sign {
            None => reference_sign = Some(sign),
            Some(r) if r != sign => return Err(Error::TransversalityViolation {
                condition: sample.condition,
                reason: format!(
                    "det A changed sign between t = {} and t = {}: the trajectory crossed A = 0",
                    s0.t, s.t
                ),
            }),
            _ => {}
        }
        Ok(sample)
    };
    run(sys, s0, plan, options, field)
}

/// Integrates the Chetaev nonholonomic motion.
pub fn simulate_nonholonomic(
    sys: &MechanicalSystem,
    s0: &TangentState,
    plan: StepPlan,
    options: SimulationOptions,
) -> Result<TrajectoryRecord> {
    run(sys, s0, plan, options, |s| nonholonomic_sample(sys, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGap {
    /// `max_t ‖(q, v)₁ − (q, v)₂‖∞`.
    pub sup: f64,
    /// `‖(q, v)₁ − (q, v)₂‖∞` at each time.
    pub per_time: Vec<f64>,
    /// `max_t |Δ|` per state component, `q` first then `v`.
    pub per_component: DVector<f64>,
}

pub fn compare_trajectories(r1: &TrajectoryRecord, r2: &TrajectoryRecord) -> Result<TrajectoryGap> {
    if r1.len() != r2.len() || r1.dimension != r2.dimension {
        return Err(Error::GridMismatch);
    }
    let same_time = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    if r1
        .times
        .iter()
        .zip(&r2.times)
        .any(|(&a, &b)| !same_time(a, b))
    {
        return Err(Error::GridMismatch);
    }
    let n = r1.dimension;
    let mut per_component = DVector::zeros(2 * n);
    let mut per_time = Vec::with_capacity(r1.len());
    for (a, b) in r1.states.iter().zip(&r2.states) {
        let mut gap: f64 = 0.0;
        for i in 0..n {
            let (dq, dv) = ((a.q[i] - b.q[i]).abs(), (a.v[i] - b.v[i]).abs());
            per_component[i] = f64::max(per_component[i], dq);
            per_component[n + i] = f64::max(per_component[n + i], dv);
            gap = gap.max(dq).max(dv);
        }
        per_time.push(gap);
    }
    Ok(TrajectoryGap {
        sup: per_time.iter().copied().fold(0.0, f64::max),
        per_time,
        per_component,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonReport {
    /// `e(h, h/2) / e(h/2, h/4)`; about 16 for a fourth-order method.
    pub ratio: f64,
    pub coarse_gap: f64,
    pub fine_gap: f64,
}

/// Richardson ratio from runs at `h`, `h/2`, `h/4` over the same horizon,
/// with gaps measured at the coarse grid points.
pub fn richardson_ratio(
    coarse: &TrajectoryRecord,
    medium: &TrajectoryRecord,
    fine: &TrajectoryRecord,
) -> Result<RichardsonReport> {
    let k = coarse.len();
    if k < 2 || medium.len() != 2 * k - 1 || fine.len() != 4 * k - 3 {
        return Err(Error::GridMismatch);
    }
    let gap =
        |a: &TangentState, b: &TangentState| norm_inf(&(&a.q - &b.q)).max(norm_inf(&(&a.v - &b.v)));
    let mut coarse_gap: f64 = 0.0;
    let mut fine_gap: f64 = 0.0;
    for i in 0..k {
        coarse_gap = coarse_gap.max(gap(&coarse.states[i], &medium.states[2 * i]));
        fine_gap = fine_gap.max(gap(&medium.states[2 * i], &fine.states[4 * i]));
    }
    Ok(RichardsonReport {
        ratio: coarse_gap / fine_gap,
        coarse_gap,
        fine_gap,
    })
}

/// Runs the closed loop at `h`, `h/2`, `h/4` concurrently and forms the
/// Richardson ratio. Any run that halts early makes this an error.
pub fn closed_loop_order_check(
    sys: &MechanicalSystem,
    s0: &TangentState,
    plan: StepPlan,
) -> Result<RichardsonReport> {
    let runs: Vec<Result<TrajectoryRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = [1, 2, 4]
            .map(|k| {
                scope.spawn(move || {
                    simulate_closed_loop(sys, s0, plan.refined(k), SimulationOptions::default())
                })
            })
            .into_iter()
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("integration thread panicked"))
            .collect()
    });
    let mut records = Vec::with_capacity(3);
    for r in runs {
        let r = r?;
        if let Some(halt) = &r.halt {
            return Err(halt.error.clone());
        }
        records.push(r);
    }
    richardson_ratio(&records[0], &records[1], &records[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use crate::expr::Expr;
    use crate::riemannian::{ForceCovector, MetricField, PotentialField};

    fn speed(c: f64) -> MechanicalSystem {
        let e = |s: &str| Expr::parse(s, 3, &["c", "g"]).unwrap();
        MechanicalSystem::new(
            MetricField::identity(3),
            PotentialField::new(e("g*q[2]")).unwrap(),
            ConstraintSet::new(vec![e("v[0]^2 + v[1]^2 + v[2]^2 - c")], 3).unwrap(),
            vec![ForceCovector::new(vec![e("v[0]"), e("v[1]"), e("v[2]")]).unwrap()],
        )
        .unwrap()
        .with_params([("c".into(), c), ("g".into(), 9.81)].into())
    }

    fn cone() -> MechanicalSystem {
        let e = |s: &str| Expr::parse(s, 3, &["a", "g"]).unwrap();
        MechanicalSystem::new(
            MetricField::identity(3),
            PotentialField::new(e("g*q[2]")).unwrap(),
            ConstraintSet::new(vec![e("a^2*(v[0]^2+v[1]^2) - v[2]^2")], 3).unwrap(),
            vec![ForceCovector::new(vec![e("q[0]"), e("q[1]"), e("1")]).unwrap()],
        )
        .unwrap()
        .with_params([("a".into(), 1.0), ("g".into(), 9.81)].into())
    }

    fn alignment() -> MechanicalSystem {
        let e = |s: &str| Expr::parse(s, 4, &["g"]).unwrap();
        MechanicalSystem::new(
            MetricField::identity(4),
            PotentialField::new(e("g*(q[1] + q[3])")).unwrap(),
            ConstraintSet::new(vec![e("v[0]*v[3] - v[2]*v[1]")], 4).unwrap(),
            vec![ForceCovector::new(vec![e("1"), e("1"), e("0"), e("0")]).unwrap()],
        )
        .unwrap()
        .with_params([("g".into(), 9.81)].into())
    }

    fn state(q: &[f64], v: &[f64]) -> TangentState {
        TangentState::new(q.to_vec(), v.to_vec(), 0.0).unwrap()
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        (a - DVector::from_column_slice(b)).amax() <= tol
    }

    #[test]
    fn closed_loop_examples() {
        let (v, acc) = closed_loop_field(
            &alignment(),
            &state(&[1.0, 0.0, 40.0, 0.0], &[80.0, 40.0, 20.0, 10.0]),
        )
        .unwrap();
        assert_eq!(v.as_slice(), &[80.0, 40.0, 20.0, 10.0]);
        assert!(close(&acc, &[-58.86, -68.67, 0.0, -9.81], 1e-12));

        let (_, acc) = closed_loop_field(&speed(1.0), &state(&[0.0; 3], &[0.0, 0.0, 1.0])).unwrap();
        assert!(close(&acc, &[0.0; 3], 1e-15));
    }

    #[test]
    fn multiplier_examples() {
        let s = state(&[0.0; 3], &[0.0, 0.0, 1.0]);
        let sol = chetaev_multipliers(&speed(1.0), &s).unwrap();
        assert_eq!(sol.gram[(0, 0)], 4.0);
        assert!((sol.lambda[0] - 4.905).abs() < 1e-14);
        let (_, acc) = nonholonomic_field(&speed(1.0), &s).unwrap();
        assert!(close(&acc, &[0.0; 3], 1e-14));

        let s = state(&[2.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        let sol = chetaev_multipliers(&cone(), &s).unwrap();
        assert_eq!(sol.gram[(0, 0)], 8.0);
        assert!((sol.lambda[0] + 2.4525).abs() < 1e-14);
        let (_, acc) = nonholonomic_field(&cone(), &s).unwrap();
        assert!(close(&acc, &[-4.905, 0.0, -4.905], 1e-14));

        let err = chetaev_multipliers(&cone(), &state(&[2.0, 0.0, 0.0], &[0.0; 3])).unwrap_err();
        assert_eq!(
            err,
            Error::ConstraintDegeneracy {
                rank: 0,
                expected: 1
            }
        );
    }

    #[test]
    fn unforced_multiplier_vanishes() {
        let sys = speed(1.0).with_params([("c".into(), 1.0), ("g".into(), 0.0)].into());
        let sol = chetaev_multipliers(&sys, &state(&[0.0; 3], &[0.6, 0.8, 0.0])).unwrap();
        assert_eq!(sol.lambda[0], 0.0);
    }

    #[test]
    fn energy_examples() {
        let (total, kinetic) = energies(
            &alignment(),
            &state(&[1.0, 0.0, 40.0, 0.0], &[80.0, 40.0, 20.0, 10.0]),
        )
        .unwrap();
        assert_eq!((total, kinetic), (4250.0, 4250.0));
        assert_eq!(
            energies(&speed(1.0), &state(&[0.0; 3], &[0.0; 3])).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn span_check_examples() {
        assert!(proposition4_check(&speed(1.0), &state(&[0.0; 3], &[0.0, 0.6, 0.8])).unwrap());
        assert!(!proposition4_check(&cone(), &state(&[2.0, 0.0, 0.0], &[1.0, 0.0, 1.0])).unwrap());

        let e = |s: &str| Expr::parse(s, 2, &[]).unwrap();
        let zero_force = MechanicalSystem::new(
            MetricField::identity(2),
            PotentialField::zero(2),
            ConstraintSet::new(vec![e("v[0]^2 + v[1]^2 - 1")], 2).unwrap(),
            vec![ForceCovector::zero(2)],
        )
        .unwrap();
        assert!(!proposition4_check(&zero_force, &state(&[0.0; 2], &[1.0, 0.0])).unwrap());
    }

    #[test]
    fn compare_identical_and_mismatched() {
        let sys = speed(1.0);
        let s0 = state(&[0.0; 3], &[0.0, 0.6, 0.8]);
        let plan = StepPlan::new(1e-2, 10).unwrap();
        let r = simulate_closed_loop(&sys, &s0, plan, SimulationOptions::default()).unwrap();
        let gap = compare_trajectories(&r, &r).unwrap();
        assert_eq!(gap.sup, 0.0);
        assert_eq!(gap.per_time.len(), 11);
        let short = simulate_closed_loop(
            &sys,
            &s0,
            StepPlan::new(1e-2, 5).unwrap(),
            Default::default(),
        )
        .unwrap();
        assert_eq!(compare_trajectories(&r, &short), Err(Error::GridMismatch));
    }

    #[test]
    fn post_step_projection_keeps_phi_at_roundoff() {
        let sys = cone();
        let s0 = state(&[2.0, 0.0, 0.0], &[0.0, 1.0, -1.0]);
        let plan = StepPlan::new(1e-2, 100).unwrap();
        let opts = SimulationOptions {
            project_each_step: true,
        };
        let r = simulate_closed_loop(&sys, &s0, plan, opts).unwrap();
        assert!(r.completed());
        assert!(r.max_abs_phi() < 1e-12);
    }

    #[test]
    fn pole_crossing_halts() {
        let sys = cone();
        let s0 = state(&[2.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        let r = simulate_closed_loop(
            &sys,
            &s0,
            StepPlan::new(1e-3, 1000).unwrap(),
            Default::default(),
        )
        .unwrap();
        let halt = r.halt.as_ref().expect("trajectory reaches the pole");
        assert!(matches!(halt.error, Error::TransversalityViolation { .. }));
        assert!(halt.time < 0.2);
        assert!(r.states.iter().all(|s| s.is_finite()));
    }
}
