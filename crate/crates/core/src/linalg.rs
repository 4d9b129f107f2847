//! Dense helpers on top of nalgebra for the small systems used here.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for constraint regularity.
pub const RANK_THRESHOLD: f64 = 1e-10;

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel * largest`.
pub fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&largest) if largest > 0.0 => s.iter().filter(|&&x| x > rel * largest).count(),
        _ => 0,
    }
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Induced 1-norm (max absolute column sum).
pub fn norm_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Induced ∞-norm (max absolute row sum).
pub fn norm_inf_mat(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
