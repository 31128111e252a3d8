//! Vectors of all `n0 x n0` minors and the Gram volume.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::linalg;

/// All `n0 x n0` minors of an `n x q` matrix.
///
/// Entries are ordered by row subset `I` (outer) then column subset `J`
/// (inner), both ascending in lexicographic order; each minor takes its
/// rows and columns in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorVector {
    pub n0: usize,
    pub rows: Vec<Vec<usize>>,
    pub cols: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

impl MinorVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, rows: &[usize], cols: &[usize]) -> Option<f64> {
        let a = self.rows.iter().position(|r| r == rows)?;
        let b = self.cols.iter().position(|c| c == cols)?;
        Some(self.values[a * self.cols.len() + b])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], &[usize], f64)> + '_ {
        let nc = self.cols.len();
        self.values.iter().enumerate().map(move |(k, v)| (self.rows[k / nc].as_slice(), self.cols[k % nc].as_slice(), *v))
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Computes every `n0 x n0` minor of `m`. Requires `1 <= n0 <= min(n, q)`.
pub fn minor_vector(m: &DMatrix<f64>, n0: usize) -> MinorVector {
    let (n, q) = m.shape();
    assert!(n0 >= 1 && n0 <= n.min(q), "minor size {n0} out of range for {n}x{q}");
    let rows: Vec<Vec<usize>> = (0..n).combinations(n0).collect();
    let cols: Vec<Vec<usize>> = (0..q).combinations(n0).collect();
    let mut values = Vec::with_capacity(rows.len() * cols.len());
    for r in &rows {
        for c in &cols {
            values.push(linalg::det(&linalg::select(m, r, c)));
        }
    }
    MinorVector { n0, rows, cols, values }
}

/// Largest absolute `n0 x n0` minor using only the columns `cols`, with the
/// row subset that attains it (first in lexicographic order on ties).
pub fn max_minor_in_columns(m: &DMatrix<f64>, cols: &[usize]) -> (f64, Vec<usize>) {
    let n0 = cols.len();
    let mut best = (-1.0, Vec::new());
    for r in (0..m.nrows()).combinations(n0) {
        let v = linalg::det(&linalg::select(m, &r, cols)).abs();
        if v > best.0 {
            best = (v, r);
        }
    }
    best
}

/// `sqrt(det(M^T M))` for an `n x n0` matrix; zero when rank-deficient.
pub fn gram_volume(m: &DMatrix<f64>) -> f64 {
    linalg::gram_volume(m)
}

/// `|minorVector(m, k)|_2` without listing the minors when there are many:
/// the square root of the `k`-th elementary symmetric polynomial of the
/// squared singular values.
pub fn minor_norm_l2(m: &DMatrix<f64>, k: usize) -> f64 {
    let (n, q) = m.shape();
    assert!(k >= 1 && k <= n.min(q), "minor size {k} out of range for {n}x{q}");
    if binomial(n, k) * binomial(q, k) <= 4096 {
        return minor_vector(m, k).norm_l2();
    }
    let s = linalg::singular_values(m);
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for sv in s {
        let t = sv * sv;
        for j in (1..=k).rev() {
            e[j] += t * e[j - 1];
        }
    }
    e[k].max(0.0).sqrt()
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
