//! Dense linear algebra helpers on `nalgebra::DMatrix`.

use nalgebra::{DMatrix, DVector};

/// Default relative singular-value threshold for rank and span decisions.
pub const RANK_TOL: f64 = 1e-9;

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with threshold `rel_tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

/// Moore-Penrose pseudoinverse, truncating singular values below `rel_tol * sigma_max`.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return DMatrix::zeros(c, r);
    }
    let cut = rel_tol * top;
    let full = svd.singular_values.iter().all(|s| *s > cut);
    let mut x = svd.pseudo_inverse(cut).expect("u and v were computed");
    if full {
        // The bidiagonal SVD can lose a few digits; Newton-Schulz steps restore them.
        let k = r.min(c);
        for _ in 0..2 {
            x = if r >= c {
                let xa = &x * m;
                (DMatrix::identity(k, k) * 2.0 - xa) * &x
            } else {
                let ax = m * &x;
                &x * (DMatrix::identity(k, k) * 2.0 - ax)
            };
        }
    }
    x
}

/// Minimum-norm least-squares solution of `m x = b`.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    pinv(m, rel_tol) * b
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `sqrt(det(M^T M))`, the volume of the parallelepiped spanned by the columns.
pub fn gram_volume(m: &DMatrix<f64>) -> f64 {
    let (n, k) = m.shape();
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let r = m.clone().qr().r();
    (0..k).map(|i| r[(i, i)].abs()).product()
}

pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        1.0
    } else {
        m.clone().lu().determinant()
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, k| m[(i, cols[k])])
}

pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, k| m[(rows[i], cols[k])])
}
