mod common;

use common::*;
use nalgebra::DVector;
use nonholo::dynamics::*;
use nonholo::riemannian::drift_acceleration;
use nonholo::scenarios::builtins;
use nonholo::{
    ConstraintSet, Error, Expr, ForceCovector, MechanicalSystem, MetricField, PotentialField,
    TangentState, TrajectoryRecord,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Free motion in the plane written in polar coordinates `(r, θ)`.
fn polar_free() -> MechanicalSystem {
    let e = |s: &str| Expr::parse(s, 2, &[]).unwrap();
    let metric =
        MetricField::expressions(vec![vec![e("1"), e("0")], vec![e("0"), e("q[0]^2")]]).unwrap();
    MechanicalSystem::new(
        metric,
        PotentialField::zero(2),
        ConstraintSet::new(vec![e("v[0]")], 2).unwrap(),
        vec![ForceCovector::zero(2)],
    )
    .unwrap()
}

#[test]
fn polar_geodesic_conserves_kinetic_energy() {
    let sys = polar_free();
    let s0 = state(&[2.0, 0.3], &[0.5, 0.7]);
    let plan = StepPlan::covering(1.0, 1e-3).unwrap();
    let rec = rk4_integrate(
        |s| Ok(FieldSample::plain(drift_acceleration(&sys, s)?)),
        |s| {
            let (energy, kinetic) = energies(&sys, s)?;
            Ok(Observation {
                phi: DVector::zeros(0),
                energy,
                kinetic,
            })
        },
        &s0,
        plan,
        None,
    )
    .unwrap();
    assert!(rec.completed());
    let k0 = rec.kinetic_energy[0];
    let drift = rec
        .kinetic_energy
        .iter()
        .map(|k| (k - k0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-8, "kinetic energy drift {drift:e}");
    // straight line in Cartesian coordinates
    let end = rec.last_state().unwrap();
    let cart = |s: &TangentState| (s.q[0] * s.q[1].cos(), s.q[0] * s.q[1].sin());
    let (x0, y0) = cart(&s0);
    let (vx, vy) = (
        0.5 * 0.3f64.cos() - 2.0 * 0.7 * 0.3f64.sin(),
        0.5 * 0.3f64.sin() + 2.0 * 0.7 * 0.3f64.cos(),
    );
    let (x1, y1) = cart(end);
    assert!((x1 - x0 - vx).abs() < 1e-9 && (y1 - y0 - vy).abs() < 1e-9);
}

#[test]
fn free_particle_moves_at_constant_velocity() {
    let s0 = state(&[1.0, -2.0, 0.5], &[0.25, 3.0, -1.5]);
    let rec = rk4_integrate(
        |_| Ok(FieldSample::plain(DVector::zeros(3))),
        |_| Ok(Observation::empty()),
        &s0,
        StepPlan::new(0.01, 100).unwrap(),
        None,
    )
    .unwrap();
    for s in &rec.states {
        let expect = &s0.q + &s0.v * s.t;
        assert!((&s.q - expect).amax() <= 1e-13);
        assert_eq!(s.v, s0.v);
    }
}

#[test]
fn ballistic_single_step_is_exact() {
    let s0 = state(&[0.0; 3], &[0.0; 3]);
    let rec = rk4_integrate(
        |_| {
            Ok(FieldSample::plain(DVector::from_column_slice(&[
                0.0, 0.0, -G,
            ])))
        },
        |_| Ok(Observation::empty()),
        &s0,
        StepPlan::new(0.1, 1).unwrap(),
        None,
    )
    .unwrap();
    assert!((rec.states[1].q[2] + 0.04905).abs() <= 1e-16);
}

#[test]
fn rk4_order_on_two_particles() {
    let s = nonholo::scenarios::builtin("two-particle-alignment").unwrap();
    let plan = StepPlan::covering(s.t_final, 0.02).unwrap();
    let r = closed_loop_order_check(&s.system, &s.initial, plan).unwrap();
    assert!(
        (12.0..=20.0).contains(&r.ratio),
        "Richardson ratio {}",
        r.ratio
    );
}

#[test]
fn closed_loop_and_chetaev_agree_where_spans_coincide() {
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..200 {
        let (sc, s) = speed_sample(&mut rng);
        assert!(proposition4_check(&sc.system, &s).unwrap());
        let (_, a) = closed_loop_field(&sc.system, &s).unwrap();
        let (_, b) = nonholonomic_field(&sc.system, &s).unwrap();
        let scale = a.amax().max(b.amax()).max(1.0);
        assert!((&a - &b).amax() <= 1e-9 * scale);
    }
}

#[test]
fn chetaev_keeps_the_constraint_rate_at_zero() {
    for sc in builtins() {
        let plan = StepPlan::covering(1.0, 1e-3).unwrap();
        let rec = simulate_nonholonomic(&sc.system, &sc.initial, plan, Default::default()).unwrap();
        assert!(rec.completed(), "{}", sc.name);
        for s in &rec.states {
            let (_, acc) = nonholonomic_field(&sc.system, s).unwrap();
            let rate = constraint_rate(&sc.system, s, &acc);
            let scale = rate_scale(&sc.system, s, &acc);
            for (r, sc_b) in rate.iter().zip(scale) {
                assert!(r.abs() <= 1e-9 * sc_b, "{}: dφ/dt = {r:e}", sc.name);
            }
        }
    }
}

#[test]
fn approaching_the_cone_pole_halts_cleanly() {
    let sc = nonholo::scenarios::builtin("cone-velocity").unwrap();
    let s0 = state(&[2.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
    let rec = simulate_closed_loop(
        &sc.system,
        &s0,
        StepPlan::covering(10.0, 1e-3).unwrap(),
        Default::default(),
    )
    .unwrap();
    let halt = rec.halt.clone().expect("halts at the pole");
    assert!(matches!(halt.error, Error::TransversalityViolation { .. }));
    assert!(rec.len() > 1);
    assert!(rec.states.iter().all(TangentState::is_finite));
    let back = TrajectoryRecord::read_csv(rec.to_csv_string().as_bytes()).unwrap();
    assert_eq!(back.len(), rec.len());
}

#[test]
fn nonholonomic_record_carries_multipliers() {
    let sc = nonholo::scenarios::builtin("constant-speed").unwrap();
    let rec = simulate_nonholonomic(
        &sc.system,
        &sc.initial,
        StepPlan::new(1e-3, 3).unwrap(),
        Default::default(),
    )
    .unwrap();
    let lambda = chetaev_multipliers(&sc.system, &sc.initial).unwrap().lambda;
    assert_eq!(rec.controls[0], lambda);
}
