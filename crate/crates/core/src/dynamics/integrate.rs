//! Fixed-step classical Runge–Kutta integration of second-order fields.

use nalgebra::DVector;

use super::record::{Halt, Row, TrajectoryRecord};
use crate::riemannian::TangentState;
use crate::{Error, Result};

/// A second-order field evaluated at one state: the acceleration plus what
/// the record stores alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub acceleration: DVector<f64>,
    /// Control `τ*` or multipliers `λ`.
    pub signal: DVector<f64>,
    pub condition: f64,
    pub residual: f64,
}

impl FieldSample {
    /// A bare acceleration with no signal or diagnostics.
    pub fn plain(acceleration: DVector<f64>) -> Self {
        FieldSample {
            acceleration,
            signal: DVector::zeros(0),
            condition: 1.0,
            residual: 0.0,
        }
    }
}

/// Quantities recorded at each accepted state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub phi: DVector<f64>,
    pub energy: f64,
    pub kinetic: f64,
}

impl Observation {
    pub fn empty() -> Self {
        Observation {
            phi: DVector::zeros(0),
            energy: 0.0,
            kinetic: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub h: f64,
    pub steps: usize,
}

impl StepPlan {
    pub fn new(h: f64, steps: usize) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {h}"
            )));
        }
        Ok(StepPlan { h, steps })
    }

    /// `round(t_final / h)` steps of size `h`.
    pub fn covering(t_final: f64, h: f64) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidInput(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        let plan = Self::new(h, 0)?;
        let steps = (t_final / h).round();
        if !(1.0..=1e9).contains(&steps) {
            return Err(Error::InvalidInput(format!(
                "t_final = {t_final} with h = {h} gives {steps} steps"
            )));
        }
        Ok(StepPlan {
            steps: steps as usize,
            ..plan
        })
    }

    /// The same horizon with the step divided by `k`.
    pub fn refined(self, k: usize) -> Self {
        StepPlan {
            h: self.h / k as f64,
            steps: self.steps * k,
        }
    }
}

pub type PostStep<'a> = &'a dyn Fn(&TangentState) -> Result<TangentState>;

/// Classical RK4 on `(q, v)` with `q̇ = v`, `v̇ = field(q, v)`.
///
/// `observe` is called at every accepted state; the stored signal and
/// diagnostics come from the first-stage evaluation at that state. A failure
/// of the very first evaluation is returned as an error. Any later failure
/// stops the integration and the record keeps every complete row up to that
/// point, with [`TrajectoryRecord::halt`] naming the error.
pub fn rk4_integrate<F, O>(
    mut field: F,
    mut observe: O,
    s0: &TangentState,
    plan: StepPlan,
    post_step: Option<PostStep<'_>>,
) -> Result<TrajectoryRecord>
where
    F: FnMut(&TangentState) -> Result<FieldSample>,
    O: FnMut(&TangentState) -> Result<Observation>,
{
    if !s0.is_finite() {
        return Err(Error::NonFiniteState { t: s0.t });
    }
    let n = s0.dimension();
    let mut k1 = field(s0)?;
    let mut obs = observe(s0)?;
    let m = obs.phi.len();
    if k1.signal.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: k1.signal.len(),
        });
    }
    let mut rec = TrajectoryRecord::new(n, m);
    let (h, t0) = (plan.h, s0.t);
    let mut s = s0.clone();

    for k in 0..=plan.steps {
        rec.push(Row {
            state: s.clone(),
            control: k1.signal.clone(),
            phi: obs.phi.clone(),
            energy: obs.energy,
            kinetic: obs.kinetic,
            condition: k1.condition,
            residual: k1.residual,
        });
        if k == plan.steps {
            break;
        }
        match advance(
            &mut field,
            &mut observe,
            &s,
            &k1,
            h,
            t0 + (k + 1) as f64 * h,
            post_step,
        ) {
            Ok((next, sample, o)) => {
                s = next;
                k1 = sample;
                obs = o;
            }
            Err(halt) => {
                rec.halt = Some(halt);
                break;
            }
        }
    }
    Ok(rec)
}

fn advance<F, O>(
    field: &mut F,
    observe: &mut O,
    s: &TangentState,
    k1: &FieldSample,
    h: f64,
    t_next: f64,
    post_step: Option<PostStep<'_>>,
) -> std::result::Result<(TangentState, FieldSample, Observation), Halt>
where
    F: FnMut(&TangentState) -> Result<FieldSample>,
    O: FnMut(&TangentState) -> Result<Observation>,
{
    let at = |time: f64| move |error: Error| Halt { time, error };
    let stage = |c: f64, dv: &DVector<f64>, dq: &DVector<f64>| TangentState {
        q: &s.q + dq * (c * h),
        v: &s.v + dv * (c * h),
        t: s.t + c * h,
    };

    let s2 = stage(0.5, &k1.acceleration, &s.v);
    let k2 = field(&s2).map_err(at(s2.t))?;
    let s3 = stage(0.5, &k2.acceleration, &s2.v);
    let k3 = field(&s3).map_err(at(s3.t))?;
    let s4 = stage(1.0, &k3.acceleration, &s3.v);
    let k4 = field(&s4).map_err(at(s4.t))?;

    let w = h / 6.0;
    let mut next = TangentState {
        q: &s.q + (&s.v + &s2.v * 2.0 + &s3.v * 2.0 + &s4.v) * w,
        v: &s.v
            + (&k1.acceleration
                + &k2.acceleration * 2.0
                + &k3.acceleration * 2.0
                + &k4.acceleration)
                * w,
        t: t_next,
    };
    if !next.is_finite() {
        return Err(Halt {
            time: t_next,
            error: Error::NonFiniteState { t: t_next },
        });
    }
    if let Some(project) = post_step {
        next = project(&next).map_err(at(t_next))?;
    }
    let sample = field(&next).map_err(at(t_next))?;
    let obs = observe(&next).map_err(at(t_next))?;
    Ok((next, sample, obs))
}
