//! Recorded trajectories and their CSV form.
//!
//! Columns are `t,q0..q{n-1},v0..v{n-1},u0..u{m-1},phi0..phi{m-1},energy,kinetic,condA`,
//! comma separated with LF line endings. Every number is written with 17
//! significant digits so it reads back bit-identically. For nonholonomic runs
//! the `u` columns carry the multipliers `λ` and `condA` the condition of the
//! multiplier Gram matrix.

use std::io::{self, BufRead, Write};

use nalgebra::DVector;

use crate::riemannian::TangentState;
use crate::{Error, Result};

/// Why and when an integration stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Halt {
    /// Time of the evaluation that failed, which may be an RK4 stage time.
    pub time: f64,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dimension: usize,
    pub constraint_count: usize,
    pub times: Vec<f64>,
    pub states: Vec<TangentState>,
    pub controls: Vec<DVector<f64>>,
    pub constraint_values: Vec<DVector<f64>>,
    pub total_energy: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    pub condition: Vec<f64>,
    /// Solve residuals. Not part of the CSV; records read from CSV hold NaN.
    pub residual: Vec<f64>,
    pub halt: Option<Halt>,
}

/// One complete row of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub state: TangentState,
    pub control: DVector<f64>,
    pub phi: DVector<f64>,
    pub energy: f64,
    pub kinetic: f64,
    pub condition: f64,
    pub residual: f64,
}

pub fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for (prefix, count) in [("q", n), ("v", n), ("u", m), ("phi", m)] {
        cols.extend((0..count).map(|i| format!("{prefix}{i}")));
    }
    cols.extend(["energy", "kinetic", "condA"].map(String::from));
    cols.join(",")
}

impl TrajectoryRecord {
    pub fn new(dimension: usize, constraint_count: usize) -> Self {
        TrajectoryRecord {
            dimension,
            constraint_count,
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            constraint_values: Vec::new(),
            total_energy: Vec::new(),
            kinetic_energy: Vec::new(),
            condition: Vec::new(),
            residual: Vec::new(),
            halt: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.halt.is_none()
    }

    pub fn push(&mut self, row: Row) {
        self.times.push(row.state.t);
        self.states.push(row.state);
        self.controls.push(row.control);
        self.constraint_values.push(row.phi);
        self.total_energy.push(row.energy);
        self.kinetic_energy.push(row.kinetic);
        self.condition.push(row.condition);
        self.residual.push(row.residual);
    }

    pub fn last_state(&self) -> Option<&TangentState> {
        self.states.last()
    }

    /// `max_t max_b |φ^b(t)|`.
    pub fn max_abs_phi(&self) -> f64 {
        self.constraint_values
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn header(&self) -> String {
        csv_header(self.dimension, self.constraint_count)
    }

    fn row_values(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        let s = &self.states[k];
        std::iter::once(self.times[k])
            .chain(s.q.iter().copied())
            .chain(s.v.iter().copied())
            .chain(self.controls[k].iter().copied())
            .chain(self.constraint_values[k].iter().copied())
            .chain([
                self.total_energy[k],
                self.kinetic_energy[k],
                self.condition[k],
            ])
    }

    /// Writes the CSV. Refuses to write any non-finite number.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header())?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            for (i, x) in self.row_values(k).enumerate() {
                if !x.is_finite() {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("non-finite value in row {k} at t = {}", self.times[k]),
                    ));
                }
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{x:.16e}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parses and validates a CSV produced by [`TrajectoryRecord::write_csv`].
    ///
    /// Checks the header against the column contract, the field count and
    /// finiteness of every row, and that times increase with a constant step.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::Io(e.to_string()))?,
            None => return Err(Error::schema("header", "file is empty")),
        };
        let (n, m) = infer_shape(&header)?;
        let width = 1 + 2 * n + 2 * m + 3;
        let mut rec = TrajectoryRecord::new(n, m);
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Io(e.to_string()))?;
            let row_no = idx + 2;
            let path = format!("line {row_no}");
            if line.ends_with('\r') {
                return Err(Error::schema(path, "CR line ending"));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(Error::schema(
                    path,
                    format!("expected {width} fields, found {}", fields.len()),
                ));
            }
            let mut vals = Vec::with_capacity(width);
            for (col, f) in fields.iter().enumerate() {
                let x: f64 = f.parse().map_err(|_| {
                    Error::schema(
                        format!("line {row_no}, column {col}"),
                        format!("not a number: `{f}`"),
                    )
                })?;
                if !x.is_finite() {
                    return Err(Error::schema(
                        format!("line {row_no}, column {col}"),
                        "non-finite value",
                    ));
                }
                vals.push(x);
            }
            let t = vals[0];
            let take =
                |from: usize, len: usize| DVector::from_column_slice(&vals[from..from + len]);
            let state = TangentState {
                q: take(1, n),
                v: take(1 + n, n),
                t,
            };
            let base = 1 + 2 * n + 2 * m;
            rec.push(Row {
                state,
                control: take(1 + 2 * n, m),
                phi: take(1 + 2 * n + m, m),
                energy: vals[base],
                kinetic: vals[base + 1],
                condition: vals[base + 2],
                residual: f64::NAN,
            });
        }
        check_time_grid(&rec.times)?;
        Ok(rec)
    }
}

fn infer_shape(header: &str) -> Result<(usize, usize)> {
    let count = |prefix: &str| {
        header
            .split(',')
            .filter(|c| {
                c.strip_prefix(prefix).is_some_and(|rest| {
                    !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
                })
            })
            .count()
    };
    let (n, m) = (count("q"), count("u"));
    if n == 0 || header != csv_header(n, m) {
        return Err(Error::schema(
            "header",
            format!(
                "does not match the column contract `{}`",
                csv_header(n.max(1), m)
            ),
        ));
    }
    Ok((n, m))
}

fn check_time_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Ok(());
    }
    let h = times[1] - times[0];
    if !(h > 0.0) {
        return Err(Error::schema("t", "times must be strictly increasing"));
    }
    for (k, w) in times.windows(2).enumerate() {
        let dt = w[1] - w[0];
        if !(dt > 0.0) || (dt - h).abs() > 1e-9 * w[1].abs().max(1.0) {
            return Err(Error::schema(
                format!("line {}", k + 3),
                "time step is not constant",
            ));
        }
    }
    Ok(())
}
