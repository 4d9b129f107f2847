//! JSON shapes written by the commands. `summary.json` is read by the
//! plotting script, so field names are part of the output contract.

use std::collections::BTreeMap;

use nonholo::dynamics::record::Halt;
use nonholo::Error;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ListEntry {
    pub name: String,
    pub description: String,
    /// `"builtin"` or the file path.
    pub source: String,
    pub dimension: usize,
    pub constraints: usize,
}

#[derive(Debug, Serialize)]
pub struct HaltReport {
    pub time: f64,
    pub kind: &'static str,
    pub message: String,
}

impl From<&Halt> for HaltReport {
    fn from(h: &Halt) -> Self {
        HaltReport {
            time: h.time,
            kind: error_kind(&h.error),
            message: h.error.to_string(),
        }
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Expr(_) => "expression",
        Error::MetricDegeneracy { .. } => "metric_degeneracy",
        Error::ConstraintDegeneracy { .. } => "constraint_degeneracy",
        Error::TransversalityViolation { .. } => "transversality_violation",
        Error::NoConvergence { .. } => "no_convergence",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InvalidSystem(_) => "invalid_system",
        Error::InvalidInput(_) => "invalid_input",
        Error::NonFiniteState { .. } => "non_finite_state",
        Error::GridMismatch => "grid_mismatch",
        Error::Schema { .. } => "schema",
        Error::UnknownScenario(_) => "unknown_scenario",
        Error::Io(_) => "io",
    }
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub description: String,
    pub dimension: usize,
    pub constraints: usize,
    pub parameters: BTreeMap<String, f64>,
    /// Values chosen rather than given by the model.
    pub assumed: Vec<String>,
    pub h: f64,
    pub t_final: f64,
    pub steps: usize,
    pub rows: usize,
    pub completed: bool,
    pub halt: Option<HaltReport>,
    pub max_abs_phi: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// Whether the control and constraint covectors span the same space at t = 0.
    pub proposition4: bool,
    pub richardson_ratio: Option<f64>,
    pub order_check_error: Option<String>,
    /// Present when the Chetaev motion was integrated.
    pub nonholonomic: Option<NonholonomicReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct NonholonomicReport {
    pub rows: usize,
    pub completed: bool,
    pub halt: Option<HaltReport>,
    pub max_abs_phi: f64,
    /// `max_t ‖(q, v)_closed − (q, v)_chetaev‖∞`; absent if either run halted.
    pub trajectory_gap: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CheckItem {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub scenario: String,
    pub pass: bool,
    pub items: Vec<CheckItem>,
    /// Informational; a system may be valid without it.
    pub proposition4: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct ValidateReport {
    pub rows: usize,
    pub pass: bool,
    pub max_energy_error: f64,
    pub max_kinetic_error: f64,
    pub max_phi_error: f64,
    pub first_bad_row: Option<usize>,
}
