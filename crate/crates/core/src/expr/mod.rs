//! Small arithmetic expressions over configuration and velocity variables.
//!
//! Expressions are written against a fixed dimension `n`: `q[i]` and `v[i]`
//! name the `i`-th configuration and velocity coordinate, any other
//! identifier is a named parameter bound at evaluation time. Supported
//! syntax, from tightest to loosest binding:
//!
//! ```text
//! atom   := number | q[i] | v[i] | name | func(expr) | (expr)
//! power  := atom ^ integer        (right-associative, integer literal only)
//! unary  := -unary | power
//! term   := unary (* | /) unary ...
//! expr   := term (+ | -) term ...
//! ```
//!
//! with `func` one of `sin cos exp sqrt abs`. Evaluation is available either
//! as a plain value ([`Expr::eval`]) or together with the exact first partial
//! derivatives with respect to all `2n` state coordinates
//! ([`Expr::eval_with_gradient`]), computed by forward-mode dual numbers.

mod dual;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use dual::DualValue;

/// Parameter bindings, name to value.
pub type Params = BTreeMap<String, f64>;

/// Names that cannot be used as parameters.
pub const RESERVED: &[&str] = &["q", "v", "sin", "cos", "exp", "sqrt", "abs"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("index {index} at offset {offset} is out of range for dimension {dimension}")]
    IndexOutOfRange {
        index: usize,
        dimension: usize,
        offset: usize,
    },
    #[error("parameter `{0}` is not bound")]
    UnboundParameter(String),
    #[error("state has length {got}, expression expects {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    NegativeSqrt(f64),
    #[error("evaluation produced a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Expression tree node. Parameters are referenced by their slot in the
/// owning [`Expr`]'s parameter list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Literal(f64),
    Q(usize),
    V(usize),
    Param(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

/// A parsed expression bound to a state dimension.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    dimension: usize,
    params: Vec<String>,
    source: String,
}

/// Structural equality: the source text is not compared.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension && self.params == other.params && self.root == other.root
    }
}

impl Expr {
    /// Parses `source` against dimension `dimension`, accepting the given
    /// parameter names.
    pub fn parse(
        source: &str,
        dimension: usize,
        parameter_names: &[&str],
    ) -> Result<Self, ExprError> {
        let (root, params) = parse::parse(source, dimension, parameter_names)?;
        Ok(Expr {
            root,
            dimension,
            params,
            source: source.to_string(),
        })
    }

    /// The constant expression `value` (used for defaulted force components).
    pub fn constant(value: f64, dimension: usize) -> Self {
        Expr {
            root: Node::Literal(value),
            dimension,
            params: Vec::new(),
            source: format!("{value}"),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Parameter names referenced by this expression, in order of first use.
    pub fn parameters(&self) -> &[String] {
        &self.params
    }

    /// Original text the expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_velocity(&self) -> bool {
        any_node(&self.root, &|n| matches!(n, Node::V(_)))
    }

    pub fn uses_configuration(&self) -> bool {
        any_node(&self.root, &|n| matches!(n, Node::Q(_)))
    }

    fn bind(&self, q: &[f64], v: &[f64], params: &Params) -> Result<Vec<f64>, ExprError> {
        for len in [q.len(), v.len()] {
            if len != self.dimension {
                return Err(ExprError::StateLength {
                    expected: self.dimension,
                    got: len,
                });
            }
        }
        self.params
            .iter()
            .map(|name| {
                params
                    .get(name)
                    .copied()
                    .ok_or_else(|| ExprError::UnboundParameter(name.clone()))
            })
            .collect()
    }

    /// Plain evaluation.
    pub fn eval(&self, q: &[f64], v: &[f64], params: &Params) -> Result<f64, ExprError> {
        let bound = self.bind(q, v, params)?;
        dual::eval_value(&self.root, q, v, &bound)
    }

    /// Value plus exact partials with respect to `(q[0..n], v[0..n])`.
    pub fn eval_with_gradient(
        &self,
        q: &[f64],
        v: &[f64],
        params: &Params,
    ) -> Result<DualValue, ExprError> {
        let bound = self.bind(q, v, params)?;
        dual::eval_dual(&self.root, q, v, &bound, self.dimension)
    }

    /// Largest absolute value among the top-level additive terms.
    ///
    /// `v[0]*v[3] - v[2]*v[1]` at velocities `(80, 40, 20, 10)` evaluates to
    /// zero but has term magnitude 800; this is the scale against which
    /// constraint residuals are judged.
    pub fn term_magnitude(&self, q: &[f64], v: &[f64], params: &Params) -> Result<f64, ExprError> {
        let bound = self.bind(q, v, params)?;
        let mut terms = Vec::new();
        collect_terms(&self.root, &mut terms);
        terms.into_iter().try_fold(0.0_f64, |acc, t| {
            Ok(acc.max(dual::eval_value(t, q, v, &bound)?.abs()))
        })
    }
}

fn collect_terms<'a>(node: &'a Node, out: &mut Vec<&'a Node>) {
    match node {
        Node::Binary(BinOp::Add | BinOp::Sub, a, b) => {
            collect_terms(a, out);
            collect_terms(b, out);
        }
        Node::Neg(a) => collect_terms(a, out),
        other => out.push(other),
    }
}

fn any_node(node: &Node, pred: &dyn Fn(&Node) -> bool) -> bool {
    if pred(node) {
        return true;
    }
    match node {
        Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => any_node(a, pred),
        Node::Binary(_, a, b) => any_node(a, pred) || any_node(b, pred),
        _ => false,
    }
}

/// Fully parenthesized rendering; re-parsing it yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.params, f)
    }
}

fn write_node(node: &Node, params: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Literal(x) => write!(f, "{x}"),
        Node::Q(i) => write!(f, "q[{i}]"),
        Node::V(i) => write!(f, "v[{i}]"),
        Node::Param(k) => write!(f, "{}", params[*k]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, params, f)?;
            write!(f, ")")
        }
        Node::Binary(op, a, b) => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            write!(f, "(")?;
            write_node(a, params, f)?;
            write!(f, " {sym} ")?;
            write_node(b, params, f)?;
            write!(f, ")")
        }
        Node::Pow(a, k) => {
            write!(f, "(")?;
            write_node(a, params, f)?;
            write!(f, ")^{k}")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, params, f)?;
            write!(f, ")")
        }
    }
}
