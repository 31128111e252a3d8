//! Multi-parameter scaling `delta^d` and scaled field evaluators.

use nalgebra::DMatrix;

use crate::error::{GeomError, Result};
use crate::system::GradedSystem;

/// `prod_mu delta_mu^{d_mu}` with `0^0 = 1`.
pub fn scale_power(degree: &[f64], delta: &[f64]) -> f64 {
    degree
        .iter()
        .zip(delta)
        .map(|(&d, &r)| if d == 0.0 { 1.0 } else { r.powf(d) })
        .product()
}

/// Expands a scalar radius to `nu` equal components.
pub fn uniform_delta(nu: usize, r: f64) -> Vec<f64> {
    vec![r; nu]
}

/// A linear combination source: fields `idx[k]` of `sys` multiplied by `scale[k]`.
///
/// This is the "matrix evaluator" consumed by the flow routines; the flow of
/// `u` is the flow of `sum_k u_k scale_k X_{idx_k}`.
#[derive(Debug, Clone)]
pub struct FieldSet<'a> {
    pub sys: &'a GradedSystem,
    pub idx: Vec<usize>,
    pub scale: Vec<f64>,
}

impl<'a> FieldSet<'a> {
    pub fn new(sys: &'a GradedSystem, idx: Vec<usize>, scale: Vec<f64>) -> FieldSet<'a> {
        assert_eq!(idx.len(), scale.len());
        FieldSet { sys, idx, scale }
    }

    /// All fields with unit scale.
    pub fn unscaled(sys: &'a GradedSystem) -> FieldSet<'a> {
        let q = sys.q();
        FieldSet { sys, idx: (0..q).collect(), scale: vec![1.0; q] }
    }

    pub fn dim(&self) -> usize {
        self.sys.n()
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Column `k` of the set at `x`.
    pub fn column_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        self.sys.eval_field_into(self.idx[k], x, out);
        let s = self.scale[k];
        out.iter_mut().for_each(|v| *v *= s);
    }

    pub fn matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, self.len());
        let mut buf = vec![0.0; n];
        for k in 0..self.len() {
            self.column_into(k, x, &mut buf);
            m.column_mut(k).copy_from_slice(&buf);
        }
        m
    }

    /// `(u . X)(x)`.
    pub fn combine_into(&self, u: &[f64], x: &[f64], out: &mut [f64], buf: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &uk) in u.iter().enumerate() {
            let c = uk * self.scale[k];
            if c == 0.0 {
                continue;
            }
            self.sys.eval_field_into(self.idx[k], x, buf);
            for (o, b) in out.iter_mut().zip(buf.iter()) {
                *o += c * b;
            }
        }
    }

    /// Jacobian of `(u . X)` at `x`.
    pub fn combine_jacobian(&self, u: &[f64], x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (k, &uk) in u.iter().enumerate() {
            let c = uk * self.scale[k];
            if c != 0.0 {
                self.sys.add_field_jacobian(self.idx[k], x, c, &mut m);
            }
        }
        m
    }

    /// The same columns with every scale multiplied by `c`.
    pub fn rescaled(&self, c: f64) -> FieldSet<'a> {
        FieldSet { sys: self.sys, idx: self.idx.clone(), scale: self.scale.iter().map(|s| s * c).collect() }
    }
}

/// The system scaled by `delta`: columns `delta^{d_j} X_j`.
#[derive(Debug, Clone)]
pub struct ScaledSystem<'a> {
    pub sys: &'a GradedSystem,
    pub delta: Vec<f64>,
    pub scales: Vec<f64>,
}

impl<'a> ScaledSystem<'a> {
    pub fn matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if !self.sys.contains(x) {
            return Err(GeomError::OutsideDomain(x.to_vec()));
        }
        Ok(self.all().matrix(x))
    }

    pub fn all(&self) -> FieldSet<'a> {
        FieldSet::new(self.sys, (0..self.sys.q()).collect(), self.scales.clone())
    }

    pub fn columns(&self, idx: &[usize]) -> FieldSet<'a> {
        FieldSet::new(self.sys, idx.to_vec(), idx.iter().map(|&j| self.scales[j]).collect())
    }
}

/// Scaled evaluator for `sys` at radius `delta`.
pub fn scale_system<'a>(sys: &'a GradedSystem, delta: &[f64]) -> Result<ScaledSystem<'a>> {
    if delta.len() != sys.nu() {
        return Err(GeomError::InvalidArgument(format!("delta has {} components, expected {}", delta.len(), sys.nu())));
    }
    if delta.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(GeomError::InvalidArgument("delta components must be non-negative".into()));
    }
    let scales = (0..sys.q()).map(|j| scale_power(sys.degree(j), delta)).collect();
    Ok(ScaledSystem { sys, delta: delta.to_vec(), scales })
}
