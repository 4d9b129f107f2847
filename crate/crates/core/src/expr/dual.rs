use super::{BinOp, ExprError, Func, Node};

/// Value with its partial derivatives with respect to the `2n` state
/// coordinates, laid out as `[∂/∂q[0..n], ∂/∂v[0..n]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub partials: Vec<f64>,
}

impl DualValue {
    fn constant(value: f64, width: usize) -> Self {
        DualValue {
            value,
            partials: vec![0.0; width],
        }
    }

    fn seed(value: f64, width: usize, slot: usize) -> Self {
        let mut d = Self::constant(value, width);
        d.partials[slot] = 1.0;
        d
    }

    pub fn dimension(&self) -> usize {
        self.partials.len() / 2
    }

    /// Partials with respect to the configuration coordinates.
    pub fn dq(&self) -> &[f64] {
        &self.partials[..self.dimension()]
    }

    /// Partials with respect to the velocity coordinates.
    pub fn dv(&self) -> &[f64] {
        &self.partials[self.dimension()..]
    }

    /// Chain rule for a unary function with derivative `slope` at the input.
    fn chain(mut self, value: f64, slope: f64) -> Self {
        self.value = value;
        for p in &mut self.partials {
            if *p != 0.0 {
                *p *= slope;
            }
        }
        self
    }
}

fn finite(x: f64) -> Result<f64, ExprError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ExprError::NonFinite)
    }
}

fn powi_checked(x: f64, k: i32) -> Result<f64, ExprError> {
    if k < 0 && x == 0.0 {
        return Err(ExprError::DivisionByZero);
    }
    finite(x.powi(k))
}

pub(super) fn eval_value(
    node: &Node,
    q: &[f64],
    v: &[f64],
    params: &[f64],
) -> Result<f64, ExprError> {
    let x = match node {
        Node::Literal(x) => *x,
        Node::Q(i) => q[*i],
        Node::V(i) => v[*i],
        Node::Param(k) => params[*k],
        Node::Neg(a) => -eval_value(a, q, v, params)?,
        Node::Binary(op, a, b) => {
            let a = eval_value(a, q, v, params)?;
            let b = eval_value(b, q, v, params)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(ExprError::DivisionByZero);
                    }
                    a / b
                }
            }
        }
        Node::Pow(a, k) => powi_checked(eval_value(a, q, v, params)?, *k)?,
        Node::Call(func, a) => {
            let a = eval_value(a, q, v, params)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(ExprError::NegativeSqrt(a));
                    }
                    a.sqrt()
                }
            }
        }
    };
    finite(x)
}

pub(super) fn eval_dual(
    node: &Node,
    q: &[f64],
    v: &[f64],
    params: &[f64],
    n: usize,
) -> Result<DualValue, ExprError> {
    let out = eval_node(node, q, v, params, n)?;
    if out.partials.iter().any(|p| !p.is_finite()) {
        return Err(ExprError::NonFinite);
    }
    Ok(out)
}

fn eval_node(
    node: &Node,
    q: &[f64],
    v: &[f64],
    params: &[f64],
    n: usize,
) -> Result<DualValue, ExprError> {
    let width = 2 * n;
    let out = match node {
        Node::Literal(x) => DualValue::constant(*x, width),
        Node::Param(k) => DualValue::constant(params[*k], width),
        Node::Q(i) => DualValue::seed(q[*i], width, *i),
        Node::V(i) => DualValue::seed(v[*i], width, n + *i),
        Node::Neg(a) => {
            let a = eval_node(a, q, v, params, n)?;
            let value = -a.value;
            a.chain(value, -1.0)
        }
        Node::Binary(op, a, b) => {
            let mut a = eval_node(a, q, v, params, n)?;
            let b = eval_node(b, q, v, params, n)?;
            match op {
                BinOp::Add => {
                    a.value += b.value;
                    a.partials
                        .iter_mut()
                        .zip(&b.partials)
                        .for_each(|(x, y)| *x += y);
                }
                BinOp::Sub => {
                    a.value -= b.value;
                    a.partials
                        .iter_mut()
                        .zip(&b.partials)
                        .for_each(|(x, y)| *x -= y);
                }
                BinOp::Mul => {
                    let (av, bv) = (a.value, b.value);
                    a.value = av * bv;
                    a.partials
                        .iter_mut()
                        .zip(&b.partials)
                        .for_each(|(x, y)| *x = *x * bv + av * y);
                }
                BinOp::Div => {
                    if b.value == 0.0 {
                        return Err(ExprError::DivisionByZero);
                    }
                    let (av, bv) = (a.value, b.value);
                    a.value = av / bv;
                    let bb = bv * bv;
                    a.partials
                        .iter_mut()
                        .zip(&b.partials)
                        .for_each(|(x, y)| *x = (*x * bv - av * y) / bb);
                }
            }
            a
        }
        Node::Pow(a, k) => {
            let a = eval_node(a, q, v, params, n)?;
            let x = a.value;
            let value = powi_checked(x, *k)?;
            let slope = match *k {
                0 => 0.0,
                1 => 1.0,
                k => f64::from(k) * powi_checked(x, k - 1)?,
            };
            a.chain(value, slope)
        }
        Node::Call(func, a) => {
            let a = eval_node(a, q, v, params, n)?;
            let x = a.value;
            match func {
                Func::Sin => a.chain(x.sin(), x.cos()),
                Func::Cos => a.chain(x.cos(), -x.sin()),
                Func::Exp => {
                    let e = x.exp();
                    a.chain(e, e)
                }
                Func::Abs => {
                    let s = if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    a.chain(x.abs(), s)
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(ExprError::NegativeSqrt(x));
                    }
                    let r = x.sqrt();
                    // infinite slope at 0 only matters for inputs that actually vary
                    a.chain(r, 0.5 / r)
                }
            }
        }
    };
    finite(out.value)?;
    Ok(out)
}
