//! Simulation of mechanical control systems with virtual nonlinear
//! nonholonomic constraints.
//!
//! A constraint `φ(q, q̇) = 0` on the velocities of a mechanical system
//! `∇_q̇ q̇ = Y⁰ + u_a Y^a` is made invariant by the unique feedback `u = τ*`
//! solving `A τ = b` at every state (see [`control::synthesize`]). The
//! closed loop can be integrated with classical RK4 and compared against the
//! Chetaev nonholonomic motion that enforces the same constraint with
//! reaction forces along `∂φ/∂q̇`.
//!
//! Configuration space is `R^n` with global coordinates throughout.

pub mod constraints;
pub mod control;
pub mod dynamics;
pub mod expr;
pub mod linalg;
pub mod riemannian;
pub mod scenarios;

mod error;

pub use constraints::{ConstraintJacobians, ConstraintSet, Regularity};
pub use control::{ControlSolution, MechanicalSystem};
pub use dynamics::record::TrajectoryRecord;
pub use error::{Error, Result};
pub use expr::{DualValue, Expr, ExprError, Params};
pub use riemannian::{ForceCovector, MetricField, PotentialField, TangentState};
pub use scenarios::Scenario;

/// Gravitational acceleration used wherever a model writes `g` without a value.
pub const STANDARD_GRAVITY: f64 = 9.81;
