//! Built-in systems and scenario files.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! name = "constant-speed"
//! description = "..."
//! dimension = 3
//! potential = "g*q[2]"
//! control_forces = [["v[0]", "v[1]", "v[2]"]]
//! constraints = ["v[0]^2 + v[1]^2 + v[2]^2 - c"]
//! assumed = ["g = 9.81"]          # optional, carried into run summaries
//!
//! [metric]
//! masses = [1.0, 1.0, 1.0]        # or dense = [[..]] or exprs = [[".."]]
//!
//! [parameters]
//! c = 2.25
//! g = 9.81
//!
//! [initial]
//! q = [0.0, 0.0, 0.0]
//! v = [1.0, 0.5, 1.0]
//!
//! [integration]
//! h = 0.001
//! t_final = 5.0
//! project_initial = false
//! compare_nonholonomic = false
//! ```
//!
//! `external_force = ["..", ..]` is optional. Expressions may reference only
//! the names declared under `[parameters]`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, DEFAULT_PROJECTION_ITERATIONS, MANIFOLD_TOLERANCE};
use crate::control::MechanicalSystem;
use crate::expr::{Expr, Params};
use crate::riemannian::{ForceCovector, MetricField, PotentialField, TangentState};
use crate::{Error, Result, STANDARD_GRAVITY};

pub const BUILTIN_NAMES: [&str; 3] = ["cone-velocity", "constant-speed", "two-particle-alignment"];

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_DURATION: f64 = 5.0;

/// Residual to which initial states are projected.
const PROJECTION_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub system: MechanicalSystem,
    pub initial: TangentState,
    pub h: f64,
    pub t_final: f64,
    pub project_initial: bool,
    pub compare_nonholonomic: bool,
    /// Values that were chosen rather than given by the model, for labelling
    /// output.
    pub assumed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    dimension: usize,
    #[serde(default = "zero_potential")]
    potential: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    external_force: Option<Vec<String>>,
    control_forces: Vec<Vec<String>>,
    constraints: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    assumed: Vec<String>,
    metric: MetricFile,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    initial: InitialFile,
    integration: IntegrationFile,
}

fn zero_potential() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dense: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exprs: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    q: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegrationFile {
    h: f64,
    t_final: f64,
    #[serde(default)]
    project_initial: bool,
    #[serde(default)]
    compare_nonholonomic: bool,
}

impl Scenario {
    pub fn parameters(&self) -> &Params {
        self.system.params()
    }

    pub fn dimension(&self) -> usize {
        self.system.dimension()
    }

    /// Parses a TOML scenario document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let at = match e.span() {
                Some(span) => location(text, span.start),
                None => "document".to_string(),
            };
            Error::schema(at, e.message().trim().to_string())
        })?;
        let mut scenario = file.build()?;
        scenario.settle_initial()?;
        Ok(scenario)
    }

    /// Like [`Scenario::from_toml`] but leaves the initial state as written,
    /// even if it is off the constraint manifold or irregular. For audits.
    pub fn from_toml_unsettled(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let at = match e.span() {
                Some(span) => location(text, span.start),
                None => "document".to_string(),
            };
            Error::schema(at, e.message().trim().to_string())
        })?;
        file.build()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&ScenarioFile::from_scenario(self))
            .map_err(|e| Error::Io(format!("cannot serialize scenario: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read(path.as_ref())?)
    }

    pub fn load_unsettled(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_unsettled(&read(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?)
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
    }

    /// Rebinds one parameter. The initial state is not touched, so callers
    /// must re-check it against the constraint.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        if !self.system.required_parameters().iter().any(|p| p == name) {
            return Err(Error::InvalidInput(format!(
                "scenario `{}` has no parameter `{name}`",
                self.name
            )));
        }
        self.system.set_param(name, value);
        Ok(())
    }

    /// Checks the initial state against `M` and, when `project_initial` is
    /// set, moves it there.
    pub fn settle_initial(&mut self) -> Result<()> {
        let c = self.system.constraints();
        let params = self.system.params();
        let reg = c.regularity(&self.initial, params)?;
        if reg.rank < c.len() {
            return Err(Error::schema(
                "initial",
                format!(
                    "constraint is not regular at the initial state (rank {} < {})",
                    reg.rank,
                    c.len()
                ),
            ));
        }
        let residual = c.relative_residual(&self.initial, params)?;
        if residual > MANIFOLD_TOLERANCE {
            if !self.project_initial {
                return Err(Error::schema(
                    "initial",
                    format!(
                        "initial state is off the constraint manifold (relative residual {residual:e}); \
                         set integration.project_initial = true to project it"
                    ),
                ));
            }
            self.initial = c.project_to_manifold(
                &self.initial,
                params,
                DEFAULT_PROJECTION_ITERATIONS,
                PROJECTION_TOLERANCE,
            )?;
        }
        Ok(())
    }
}

/// `line L, column C` for a byte offset.
fn location(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    format!("line {line}, column {col}")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))
}

impl ScenarioFile {
    fn build(self) -> Result<Scenario> {
        let n = self.dimension;
        if n == 0 {
            return Err(Error::schema("dimension", "must be at least 1"));
        }
        let names: Vec<&str> = self.parameters.keys().map(String::as_str).collect();
        for (name, value) in &self.parameters {
            if !value.is_finite() {
                return Err(Error::schema(
                    format!("parameters.{name}"),
                    "must be finite",
                ));
            }
            if crate::expr::RESERVED.contains(&name.as_str()) {
                return Err(Error::schema(format!("parameters.{name}"), "reserved name"));
            }
        }
        let parse = |path: String, src: &str| {
            Expr::parse(src, n, &names).map_err(|e| Error::schema(path, e.to_string()))
        };
        let vector = |path: &str, srcs: &[String]| -> Result<Vec<Expr>> {
            if srcs.len() != n {
                return Err(Error::schema(
                    path,
                    format!("expected {n} components, found {}", srcs.len()),
                ));
            }
            srcs.iter()
                .enumerate()
                .map(|(i, s)| parse(format!("{path}[{i}]"), s))
                .collect()
        };

        let metric = self.metric.build(n, &parse)?;

        let m = self.constraints.len();
        if m == 0 {
            return Err(Error::schema(
                "constraints",
                "at least one constraint is required",
            ));
        }
        if m >= n {
            return Err(Error::schema(
                "constraints",
                format!("{m} constraints on a {n}-dimensional system; m < n is required"),
            ));
        }
        if self.control_forces.len() != m {
            return Err(Error::schema(
                "control_forces",
                format!(
                    "expected one control force per constraint ({m}), found {}",
                    self.control_forces.len()
                ),
            ));
        }
        let phi = self
            .constraints
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let path = format!("constraints[{b}]");
                let e = parse(path.clone(), s)?;
                if !e.uses_velocity() {
                    return Err(Error::schema(
                        path,
                        "constraint must involve at least one velocity",
                    ));
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>>>()?;
        let constraints = ConstraintSet::new(phi, n)?;

        let potential = parse("potential".into(), &self.potential)?;
        if potential.uses_velocity() {
            return Err(Error::schema(
                "potential",
                "potential must not depend on velocities",
            ));
        }
        let potential = PotentialField::new(potential)?;

        let forces = self
            .control_forces
            .iter()
            .enumerate()
            .map(|(a, f)| ForceCovector::new(vector(&format!("control_forces[{a}]"), f)?))
            .collect::<Result<Vec<_>>>()?;

        let mut system = MechanicalSystem::new(metric, potential, constraints, forces)?
            .with_params(self.parameters.clone());
        if let Some(f0) = &self.external_force {
            system =
                system.with_external_force(ForceCovector::new(vector("external_force", f0)?)?)?;
        }
        system.check_parameters()?;

        for (path, xs) in [
            ("initial.q", &self.initial.q),
            ("initial.v", &self.initial.v),
        ] {
            if xs.len() != n {
                return Err(Error::schema(
                    path,
                    format!("expected {n} entries, found {}", xs.len()),
                ));
            }
            if xs.iter().any(|x| !x.is_finite()) {
                return Err(Error::schema(path, "entries must be finite"));
            }
        }
        let initial = TangentState::new(self.initial.q.clone(), self.initial.v.clone(), 0.0)?;

        let IntegrationFile {
            h,
            t_final,
            project_initial,
            compare_nonholonomic,
        } = self.integration;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::schema("integration.h", "must be positive"));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::schema("integration.t_final", "must be positive"));
        }
        if system.metric().at(&initial.q, system.params()).is_err() {
            return Err(Error::schema(
                "metric",
                "not positive-definite at the initial configuration",
            ));
        }

        Ok(Scenario {
            name: self.name,
            description: self.description,
            system,
            initial,
            h,
            t_final,
            project_initial,
            compare_nonholonomic,
            assumed: self.assumed,
        })
    }

    fn from_scenario(s: &Scenario) -> Self {
        let sys = &s.system;
        let sources = |f: &ForceCovector| {
            f.components()
                .iter()
                .map(|e| e.source().to_string())
                .collect()
        };
        ScenarioFile {
            name: s.name.clone(),
            description: s.description.clone(),
            dimension: sys.dimension(),
            potential: sys.potential().expr().source().to_string(),
            external_force: sys.external_force().map(sources),
            control_forces: sys.control_forces().iter().map(sources).collect(),
            constraints: sys
                .constraints()
                .exprs()
                .iter()
                .map(|e| e.source().to_string())
                .collect(),
            assumed: s.assumed.clone(),
            metric: MetricFile::from_metric(sys.metric()),
            parameters: sys.params().clone(),
            initial: InitialFile {
                q: s.initial.q.iter().copied().collect(),
                v: s.initial.v.iter().copied().collect(),
            },
            integration: IntegrationFile {
                h: s.h,
                t_final: s.t_final,
                project_initial: s.project_initial,
                compare_nonholonomic: s.compare_nonholonomic,
            },
        }
    }
}

impl MetricFile {
    fn build(&self, n: usize, parse: &dyn Fn(String, &str) -> Result<Expr>) -> Result<MetricField> {
        let given = [
            self.masses.is_some(),
            self.dense.is_some(),
            self.exprs.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(Error::schema(
                "metric",
                "exactly one of `masses`, `dense`, `exprs` must be given",
            ));
        }
        let square = |rows: usize, cols: &[usize]| rows == n && cols.iter().all(|&c| c == n);
        if let Some(masses) = &self.masses {
            if masses.len() != n {
                return Err(Error::schema(
                    "metric.masses",
                    format!("expected {n} entries"),
                ));
            }
            return MetricField::diagonal(masses.clone())
                .map_err(|e| Error::schema("metric.masses", e.to_string()));
        }
        if let Some(rows) = &self.dense {
            let cols: Vec<usize> = rows.iter().map(Vec::len).collect();
            if !square(rows.len(), &cols) {
                return Err(Error::schema(
                    "metric.dense",
                    format!("expected a {n}×{n} matrix"),
                ));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            return MetricField::dense(DMatrix::from_row_slice(n, n, &flat))
                .map_err(|e| Error::schema("metric.dense", e.to_string()));
        }
        let rows = self.exprs.as_ref().expect("one variant is present");
        let cols: Vec<usize> = rows.iter().map(Vec::len).collect();
        if !square(rows.len(), &cols) {
            return Err(Error::schema(
                "metric.exprs",
                format!("expected a {n}×{n} matrix"),
            ));
        }
        let entries = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, s)| parse(format!("metric.exprs[{i}][{j}]"), s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        MetricField::expressions(entries).map_err(|e| Error::schema("metric.exprs", e.to_string()))
    }

    fn from_metric(metric: &MetricField) -> Self {
        match metric {
            MetricField::ConstantDiagonal(m) => MetricFile {
                masses: Some(m.iter().copied().collect()),
                ..Default::default()
            },
            MetricField::ConstantDense(g) => MetricFile {
                dense: Some(g.row_iter().map(|r| r.iter().copied().collect()).collect()),
                ..Default::default()
            },
            MetricField::Expression(rows) => MetricFile {
                exprs: Some(
                    rows.iter()
                        .map(|r| r.iter().map(|e| e.source().to_string()).collect())
                        .collect(),
                ),
                ..Default::default()
            },
        }
    }
}

/// One of the three built-in systems.
pub fn builtin(name: &str) -> Result<Scenario> {
    let file = match name {
        "cone-velocity" => cone_velocity(),
        "constant-speed" => constant_speed(),
        "two-particle-alignment" => two_particle_alignment(),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    let mut scenario = file.build()?;
    scenario.settle_initial()?;
    Ok(scenario)
}

pub fn builtins() -> Vec<Scenario> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n).expect("built-in scenarios are valid"))
        .collect()
}

fn strings<const K: usize>(xs: [&str; K]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn defaults() -> IntegrationFile {
    IntegrationFile {
        h: DEFAULT_STEP,
        t_final: DEFAULT_DURATION,
        project_initial: false,
        compare_nonholonomic: false,
    }
}

/// A unit-mass particle in R³ under gravity whose velocity is kept on the
/// cone `a²(ẋ² + ẏ²) = ż²` by a force along `x dx + y dy + dz`.
fn cone_velocity() -> ScenarioFile {
    ScenarioFile {
        name: "cone-velocity".into(),
        description: "particle in R^3 with velocity held on the cone a^2(vx^2+vy^2) = vz^2".into(),
        dimension: 3,
        potential: "g*q[2]".into(),
        external_force: None,
        control_forces: vec![strings(["q[0]", "q[1]", "1"])],
        constraints: strings(["a^2*(v[0]^2 + v[1]^2) - v[2]^2"]),
        assumed: strings([
            "m = 1",
            "g = 9.81",
            "a = 1",
            "initial state q = (2, 0, 0), v = (0, 1, -1)",
            "h = 0.001",
            "t_final = 5",
        ]),
        metric: MetricFile {
            masses: Some(vec![1.0; 3]),
            ..Default::default()
        },
        parameters: [("a".to_string(), 1.0), ("g".to_string(), STANDARD_GRAVITY)].into(),
        initial: InitialFile {
            q: vec![2.0, 0.0, 0.0],
            v: vec![0.0, 1.0, -1.0],
        },
        integration: defaults(),
    }
}

/// A unit-mass particle in R³ under gravity whose speed is held at `√c` by a
/// force along its own velocity.
fn constant_speed() -> ScenarioFile {
    let v = vec![1.0, 0.5, 1.0];
    let c = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    ScenarioFile {
        name: "constant-speed".into(),
        description: "particle in R^3 with speed held constant, |v|^2 = c".into(),
        dimension: 3,
        potential: "g*q[2]".into(),
        external_force: None,
        control_forces: vec![strings(["v[0]", "v[1]", "v[2]"])],
        constraints: strings(["v[0]^2 + v[1]^2 + v[2]^2 - c"]),
        assumed: strings([
            "m = 1",
            "g = 9.81",
            "initial state q = (0, 0, 0), v = (1, 0.5, 1)",
            "c = |v(0)|^2",
            "h = 0.001",
            "t_final = 5",
        ]),
        metric: MetricFile {
            masses: Some(vec![1.0; 3]),
            ..Default::default()
        },
        parameters: [("c".to_string(), c), ("g".to_string(), STANDARD_GRAVITY)].into(),
        initial: InitialFile { q: vec![0.0; 3], v },
        integration: defaults(),
    }
}

/// Two unit-mass particles in a vertical plane, layout `(x₁, z₁, x₂, z₂)`,
/// with the velocity directions kept aligned, `ẋ₁ż₂ − ẋ₂ż₁ = 0`, by a force
/// acting on the first particle along `dx₁ + dz₁`.
fn two_particle_alignment() -> ScenarioFile {
    ScenarioFile {
        name: "two-particle-alignment".into(),
        description:
            "two particles under gravity with parallel velocities, layout (x1, z1, x2, z2)".into(),
        dimension: 4,
        potential: "g*(q[1] + q[3])".into(),
        external_force: None,
        control_forces: vec![strings(["1", "1", "0", "0"])],
        constraints: strings(["v[0]*v[3] - v[2]*v[1]"]),
        assumed: strings(["m1 = m2 = 1", "g = 9.81", "h = 0.001", "t_final = 5"]),
        metric: MetricFile {
            masses: Some(vec![1.0; 4]),
            ..Default::default()
        },
        parameters: [("g".to_string(), STANDARD_GRAVITY)].into(),
        initial: InitialFile {
            q: vec![1.0, 0.0, 40.0, 0.0],
            v: vec![80.0, 40.0, 20.0, 10.0],
        },
        integration: defaults(),
    }
}
