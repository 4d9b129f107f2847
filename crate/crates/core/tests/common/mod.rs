#![allow(dead_code)]

use nalgebra::DVector;
use nonholo::scenarios::{builtin, Scenario};
use nonholo::{MechanicalSystem, TangentState};
use rand::rngs::StdRng;
use rand::Rng;

pub const G: f64 = 9.81;

pub fn state(q: &[f64], v: &[f64]) -> TangentState {
    TangentState::new(q.to_vec(), v.to_vec(), 0.0).unwrap()
}

/// `|x| ≥ 0.1 · scale`, used to keep samples away from poles of the
/// closed-form laws.
fn well_away(x: f64, scale: f64) -> bool {
    x.abs() >= 0.1 * scale
}

/// Cone-velocity system with a random `a ∈ [0.5, 2]` and a random state on
/// the cone whose feedback denominator `a²xẋ + a²yẏ − ż` is not small.
pub fn cone_sample(rng: &mut StdRng) -> (Scenario, TangentState) {
    let mut s = builtin("cone-velocity").unwrap();
    let a: f64 = rng.random_range(0.5..2.0);
    s.set_param("a", a).unwrap();
    loop {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (vx, vy): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let vz = sign * a * (vx * vx + vy * vy).sqrt();
        let den = a * a * (q[0] * vx + q[1] * vy) - vz;
        let scale = a * a * (q[0] * vx).abs() + a * a * (q[1] * vy).abs() + vz.abs();
        if vz.abs() > 0.1 && well_away(den, scale) {
            return (s, state(&q, &[vx, vy, vz]));
        }
    }
}

/// Constant-speed system with random `c ∈ [0.5, 4]` and a random state on
/// the speed sphere.
pub fn speed_sample(rng: &mut StdRng) -> (Scenario, TangentState) {
    let mut s = builtin("constant-speed").unwrap();
    let c: f64 = rng.random_range(0.5..4.0);
    s.set_param("c", c).unwrap();
    let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
    let dir = loop {
        let d = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        if d.norm() > 0.1 {
            break d.normalize();
        }
    };
    let v = dir * c.sqrt();
    (s, state(&q, v.as_slice()))
}

/// Two-particle system at a random state with parallel velocities and a
/// feedback denominator `ż₂ − ẋ₂` that is not small.
pub fn alignment_sample(rng: &mut StdRng) -> (Scenario, TangentState) {
    let s = builtin("two-particle-alignment").unwrap();
    loop {
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
        let (x1, z1): (f64, f64) = (
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        );
        let k: f64 = rng.random_range(-2.0..2.0);
        let (x2, z2) = (k * x1, k * z1);
        if well_away(z2 - x2, z2.abs() + x2.abs()) && x1.abs().max(z1.abs()) > 1.0 {
            return (s, state(&q, &[x1, z1, x2, z2]));
        }
    }
}

/// `−m g ż / (a²xẋ + a²yẏ − ż)` with unit mass.
pub fn cone_law(a: f64, s: &TangentState) -> f64 {
    let (q, v) = (&s.q, &s.v);
    -G * v[2] / (a * a * q[0] * v[0] + a * a * q[1] * v[1] - v[2])
}

/// `m g ż / c` with unit mass.
pub fn speed_law(c: f64, s: &TangentState) -> f64 {
    G * s.v[2] / c
}

/// `(g ẋ₁ − g ẋ₂) / (ż₂ − ẋ₂)`.
pub fn alignment_law(s: &TangentState) -> f64 {
    let v = &s.v;
    (G * v[0] - G * v[2]) / (v[3] - v[2])
}

/// Scale for a constraint rate: the sum of the magnitudes of its terms,
/// `Σ |∂φ/∂q_i v_i| + |∂φ/∂v_i a_i|`, floored at 1.
pub fn rate_scale(sys: &MechanicalSystem, s: &TangentState, acc: &DVector<f64>) -> Vec<f64> {
    let jac = sys.constraints().evaluate(s, sys.params()).unwrap();
    (0..jac.value.len())
        .map(|b| {
            let mut total = 0.0;
            for i in 0..s.dimension() {
                total += (jac.dq[(b, i)] * s.v[i]).abs() + (jac.dv[(b, i)] * acc[i]).abs();
            }
            total.max(1.0)
        })
        .collect()
}

/// `dφ/dt` along the field with the given acceleration.
pub fn constraint_rate(
    sys: &MechanicalSystem,
    s: &TangentState,
    acc: &DVector<f64>,
) -> DVector<f64> {
    sys.constraints()
        .evaluate(s, sys.params())
        .unwrap()
        .rate(&s.v, acc)
}
