//! Riemannian data of a mechanical system on `R^n`: the kinetic-energy
//! metric, its Levi-Civita connection, the musical isomorphisms, the
//! potential and force covectors, and the drift of the unactuated system.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::control::MechanicalSystem;
use crate::expr::{Expr, Params};
use crate::{Error, Result};

/// A point `(q, q̇)` of the tangent bundle, stamped with its time.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

impl TangentState {
    pub fn new(q: Vec<f64>, v: Vec<f64>, t: f64) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidInput(
                "tangent state needs dimension ≥ 1".into(),
            ));
        }
        if q.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: v.len(),
            });
        }
        let s = TangentState {
            q: DVector::from_vec(q),
            v: DVector::from_vec(v),
            t,
        };
        if !s.is_finite() {
            return Err(Error::InvalidInput(
                "tangent state has non-finite entries".into(),
            ));
        }
        Ok(s)
    }

    pub fn dimension(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub(crate) fn check_dimension(&self, n: usize) -> Result<()> {
        if self.dimension() != n || self.v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.dimension(),
            });
        }
        Ok(())
    }
}

/// Metric tensor field `G_ij(q)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricField {
    /// `diag(masses)`.
    ConstantDiagonal(DVector<f64>),
    ConstantDense(DMatrix<f64>),
    /// Entry-wise expressions over the configuration variables.
    Expression(Vec<Vec<Expr>>),
}

/// Metric evaluated and factored at one configuration.
#[derive(Debug, Clone)]
pub struct LocalMetric {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl LocalMetric {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `G⁻¹ α`.
    pub fn sharp(&self, alpha: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(alpha)
    }

    /// `G v`.
    pub fn flat(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// `G⁻¹ Mᵀ` for a stack of covectors given as rows of `rows`.
    pub fn sharp_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(&rows.transpose())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

const SYMMETRY_TOL: f64 = 1e-12;

impl MetricField {
    pub fn diagonal(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidSystem(
                "diagonal metric needs positive finite masses".into(),
            ));
        }
        Ok(MetricField::ConstantDiagonal(DVector::from_vec(masses)))
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidSystem("dense metric must be square".into()));
        }
        if matrix != matrix.transpose() {
            return Err(Error::InvalidSystem(
                "dense metric must be symmetric".into(),
            ));
        }
        if Cholesky::new(matrix.clone()).is_none() {
            return Err(Error::InvalidSystem(
                "dense metric must be positive-definite".into(),
            ));
        }
        Ok(MetricField::ConstantDense(matrix))
    }

    pub fn expressions(entries: Vec<Vec<Expr>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSystem(
                "metric expressions must form a square matrix".into(),
            ));
        }
        for e in entries.iter().flatten() {
            if e.dimension() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: e.dimension(),
                });
            }
            if e.uses_velocity() {
                return Err(Error::InvalidSystem(format!(
                    "metric entry `{}` depends on velocities",
                    e.source()
                )));
            }
        }
        Ok(MetricField::Expression(entries))
    }

    pub fn identity(n: usize) -> Self {
        MetricField::ConstantDiagonal(DVector::from_element(n, 1.0))
    }

    pub fn dimension(&self) -> usize {
        match self {
            MetricField::ConstantDiagonal(m) => m.len(),
            MetricField::ConstantDense(m) => m.nrows(),
            MetricField::Expression(e) => e.len(),
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, MetricField::Expression(_))
    }

    /// Parameters referenced by expression entries.
    pub fn parameters(&self) -> Vec<String> {
        match self {
            MetricField::Expression(rows) => {
                let mut out: Vec<String> = Vec::new();
                for p in rows.iter().flatten().flat_map(|e| e.parameters()) {
                    if !out.contains(p) {
                        out.push(p.clone());
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }

    fn raw_matrix(&self, q: &DVector<f64>, params: &Params) -> Result<DMatrix<f64>> {
        let n = self.dimension();
        if q.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.len(),
            });
        }
        Ok(match self {
            MetricField::ConstantDiagonal(m) => DMatrix::from_diagonal(m),
            MetricField::ConstantDense(m) => m.clone(),
            MetricField::Expression(rows) => {
                let zeros = vec![0.0; n];
                let mut g = DMatrix::zeros(n, n);
                for (i, row) in rows.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        g[(i, j)] = e.eval(q.as_slice(), &zeros, params)?;
                    }
                }
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (g[(i, j)], g[(j, i)]);
                        if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                            return Err(Error::MetricDegeneracy {
                                q: q.iter().copied().collect(),
                            });
                        }
                    }
                }
                g
            }
        })
    }

    /// Evaluates and Cholesky-factors the metric at `q`.
    pub fn at(&self, q: &DVector<f64>, params: &Params) -> Result<LocalMetric> {
        let matrix = self.raw_matrix(q, params)?;
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| Error::MetricDegeneracy {
            q: q.iter().copied().collect(),
        })?;
        Ok(LocalMetric { matrix, chol })
    }

    /// `G_ij(q)`, guaranteed symmetric positive-definite.
    pub fn metric_at(&self, q: &DVector<f64>, params: &Params) -> Result<DMatrix<f64>> {
        Ok(self.at(q, params)?.matrix)
    }

    /// `∂G/∂q^k` for each `k`; all zero for constant metrics.
    pub fn derivatives(&self, q: &DVector<f64>, params: &Params) -> Result<Vec<DMatrix<f64>>> {
        let n = self.dimension();
        let mut d = vec![DMatrix::zeros(n, n); n];
        if let MetricField::Expression(rows) = self {
            let zeros = vec![0.0; n];
            for (i, row) in rows.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    let dual = e.eval_with_gradient(q.as_slice(), &zeros, params)?;
                    for (k, dk) in d.iter_mut().enumerate() {
                        dk[(i, j)] = dual.dq()[k];
                    }
                }
            }
        }
        Ok(d)
    }

    /// Levi-Civita Christoffel symbols
    /// `Γ^k_ij = ½ G^{kl} (∂_i G_jl + ∂_j G_il − ∂_l G_ij)`.
    pub fn christoffel_at(&self, q: &DVector<f64>, params: &Params) -> Result<Christoffel> {
        let local = self.at(q, params)?;
        let n = self.dimension();
        if self.is_constant() {
            return Ok(Christoffel::zero(n));
        }
        let dg = self.derivatives(q, params)?;
        let ginv = local.inverse();
        let mut data = vec![0.0; n * n * n];
        for i in 0..n {
            for j in i..n {
                // lowered symbols Γ_{l,ij}
                let lowered: Vec<f64> = (0..n)
                    .map(|l| 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]))
                    .collect();
                for k in 0..n {
                    let g: f64 = (0..n).map(|l| ginv[(k, l)] * lowered[l]).sum();
                    data[(k * n + i) * n + j] = g;
                    data[(k * n + j) * n + i] = g;
                }
            }
        }
        Ok(Christoffel { n, data })
    }
}

/// `Γ^k_ij` stored densely, `n × n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zero(n: usize) -> Self {
        Christoffel {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// `Γ^k_ij v^i v^j` for each `k`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += self.get(k, i, j) * v[i] * v[j];
                }
            }
            acc
        })
    }
}

/// `G(q)⁻¹ α`.
pub fn sharp(
    metric: &MetricField,
    q: &DVector<f64>,
    params: &Params,
    alpha: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(metric.at(q, params)?.sharp(alpha))
}

/// `G(q) v`.
pub fn flat(
    metric: &MetricField,
    q: &DVector<f64>,
    params: &Params,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(metric.at(q, params)?.flat(v))
}

/// Potential energy `V(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    expr: Expr,
}

impl PotentialField {
    pub fn new(expr: Expr) -> Result<Self> {
        if expr.uses_velocity() {
            return Err(Error::InvalidSystem(format!(
                "potential `{}` depends on velocities",
                expr.source()
            )));
        }
        Ok(PotentialField { expr })
    }

    pub fn zero(n: usize) -> Self {
        PotentialField {
            expr: Expr::constant(0.0, n),
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn value(&self, q: &DVector<f64>, params: &Params) -> Result<f64> {
        let zeros = vec![0.0; q.len()];
        Ok(self.expr.eval(q.as_slice(), &zeros, params)?)
    }

    /// The covector `dV`.
    pub fn differential(&self, q: &DVector<f64>, params: &Params) -> Result<DVector<f64>> {
        let zeros = vec![0.0; q.len()];
        let d = self.expr.eval_with_gradient(q.as_slice(), &zeros, params)?;
        Ok(DVector::from_column_slice(d.dq()))
    }
}

/// A covector field `f(q, q̇) = f_i dq^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceCovector {
    components: Vec<Expr>,
}

impl ForceCovector {
    pub fn new(components: Vec<Expr>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidSystem(
                "force covector needs components".into(),
            ));
        }
        if let Some(bad) = components.iter().find(|e| e.dimension() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.dimension(),
            });
        }
        Ok(ForceCovector { components })
    }

    pub fn zero(n: usize) -> Self {
        ForceCovector {
            components: (0..n).map(|_| Expr::constant(0.0, n)).collect(),
        }
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn evaluate(&self, s: &TangentState, params: &Params) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.components.len());
        for (slot, e) in out.iter_mut().zip(&self.components) {
            *slot = e.eval(s.q.as_slice(), s.v.as_slice(), params)?;
        }
        Ok(out)
    }
}

/// Acceleration of the unactuated forced system
/// `q̈ = −Γ(q̇, q̇) − grad V + ♯F⁰(q, q̇)`.
pub fn drift_acceleration(sys: &MechanicalSystem, s: &TangentState) -> Result<DVector<f64>> {
    s.check_dimension(sys.dimension())?;
    let local = sys.metric().at(&s.q, sys.params())?;
    drift_with_metric(sys, s, &local)
}

pub(crate) fn drift_with_metric(
    sys: &MechanicalSystem,
    s: &TangentState,
    local: &LocalMetric,
) -> Result<DVector<f64>> {
    let params = sys.params();
    let mut covector = -sys.potential().differential(&s.q, params)?;
    if let Some(f0) = sys.external_force() {
        covector += f0.evaluate(s, params)?;
    }
    let mut acc = local.sharp(&covector);
    if !sys.metric().is_constant() {
        acc -= sys.metric().christoffel_at(&s.q, params)?.contract(&s.v);
    }
    Ok(acc)
}
