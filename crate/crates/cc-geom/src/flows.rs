//! Flows of vector fields: `e^{u.X} x0`, its Jacobian in `u`, and compositions.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::scaling::FieldSet;
use crate::system::BoxDomain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with a fixed number of steps on `[0, 1]`.
    Rk4 { steps: usize },
    /// Dormand-Prince 5(4) with mixed absolute/relative error control.
    Rk45 { atol: f64, rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { method: Method::Rk45 { atol: 1e-10, rtol: 1e-10 }, max_steps: 100_000 }
    }
}

impl IntegratorConfig {
    pub fn rk4(steps: usize) -> Self {
        IntegratorConfig { method: Method::Rk4 { steps }, max_steps: steps.max(1) }
    }

    pub fn rk45(atol: f64, rtol: f64) -> Self {
        IntegratorConfig { method: Method::Rk45 { atol, rtol }, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.max_steps >= 1
            && match self.method {
                Method::Rk4 { steps } => steps >= 1,
                Method::Rk45 { atol, rtol } => atol > 0.0 && rtol > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(GeomError::InvalidArgument("integrator tolerances and step counts must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult {
    pub endpoint: Vec<f64>,
    pub steps: usize,
    pub error_estimate: f64,
    pub left_domain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianResult {
    pub endpoint: Vec<f64>,
    /// `n x m` derivative of the endpoint in `u`.
    pub du: DMatrix<f64>,
    /// `n x n` derivative of the endpoint in `x0`, when requested.
    pub dx0: Option<DMatrix<f64>>,
    pub left_domain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMethod {
    Variational,
    FiniteDifference { h: f64 },
}

struct Outcome {
    y: Vec<f64>,
    steps: usize,
    err: f64,
    left: bool,
}

// Dormand-Prince tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the autonomous system `y' = f(y)` over `t in [0, 1]`.
/// The first `n_state` components are checked against `domain` after each accepted step.
fn integrate<F>(mut f: F, y0: Vec<f64>, n_state: usize, domain: &BoxDomain, cfg: &IntegratorConfig) -> Result<Outcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    cfg.validate()?;
    let dim = y0.len();
    let mut y = y0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut tmp = vec![0.0; dim];
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    let inside = |v: &[f64]| domain.contains(&v[..n_state]);
    match cfg.method {
        Method::Rk4 { steps } => {
            let h = 1.0 / steps as f64;
            for s in 0..steps {
                f(&y, &mut k[0]);
                for i in 0..dim {
                    tmp[i] = y[i] + 0.5 * h * k[0][i];
                }
                f(&tmp, &mut k[1]);
                for i in 0..dim {
                    tmp[i] = y[i] + 0.5 * h * k[1][i];
                }
                f(&tmp, &mut k[2]);
                for i in 0..dim {
                    tmp[i] = y[i] + h * k[2][i];
                }
                f(&tmp, &mut k[3]);
                for i in 0..dim {
                    y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
                if !finite(&y) {
                    return Err(GeomError::Integration("non-finite state".into()));
                }
                if !inside(&y) {
                    return Ok(Outcome { y, steps: s + 1, err: f64::NAN, left: true });
                }
            }
            Ok(Outcome { y, steps, err: f64::NAN, left: false })
        }
        Method::Rk45 { atol, rtol } => {
            let mut t = 0.0;
            let mut h: f64 = 0.1;
            let mut accepted = 0usize;
            let mut attempts = 0usize;
            let mut err_sum = 0.0;
            let mut y5 = vec![0.0; dim];
            f(&y, &mut k[0]);
            while t < 1.0 {
                if attempts >= cfg.max_steps {
                    return Err(GeomError::Integration(format!("step budget {} exhausted at t = {t:.6}", cfg.max_steps)));
                }
                attempts += 1;
                h = h.min(1.0 - t);
                for s in 1..7 {
                    for i in 0..dim {
                        let mut acc = y[i];
                        for (r, ar) in A[s].iter().enumerate().take(s) {
                            acc += h * ar * k[r][i];
                        }
                        tmp[i] = acc;
                    }
                    f(&tmp, &mut k[s]);
                }
                let mut norm = 0.0;
                let mut abs_err: f64 = 0.0;
                for i in 0..dim {
                    let mut v5 = y[i];
                    let mut e = 0.0;
                    for s in 0..7 {
                        v5 += h * B5[s] * k[s][i];
                        e += h * (B5[s] - B4[s]) * k[s][i];
                    }
                    y5[i] = v5;
                    let sc = atol + rtol * y[i].abs().max(v5.abs());
                    norm += (e / sc) * (e / sc);
                    abs_err = abs_err.max(e.abs());
                }
                let norm = (norm / dim as f64).sqrt();
                if !norm.is_finite() || !finite(&y5) {
                    if h < 1e-14 {
                        return Err(GeomError::Integration("non-finite state".into()));
                    }
                    h *= 0.25;
                    continue;
                }
                if norm <= 1.0 {
                    t += h;
                    std::mem::swap(&mut y, &mut y5);
                    // FSAL: the last stage is the derivative at the new point.
                    let last = k.pop().expect("seven stages");
                    k.insert(0, last);
                    accepted += 1;
                    err_sum += abs_err;
                    if !inside(&y) {
                        return Ok(Outcome { y, steps: accepted, err: err_sum, left: true });
                    }
                    if 1.0 - t < 1e-15 {
                        break;
                    }
                }
                let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
                h *= factor;
                if h < 1e-14 {
                    return Err(GeomError::Integration("step size underflow".into()));
                }
            }
            Ok(Outcome { y, steps: accepted, err: err_sum, left: false })
        }
    }
}

fn check_input(fs: &FieldSet, u: &[f64], x0: &[f64]) -> Result<()> {
    if u.len() != fs.len() || x0.len() != fs.dim() {
        return Err(GeomError::InvalidArgument("coefficient or point dimension mismatch".into()));
    }
    if !fs.sys.contains(x0) {
        return Err(GeomError::OutsideDomain(x0.to_vec()));
    }
    Ok(())
}

/// Endpoint at `t = 1` of `x' = (u . X)(x)`, `x(0) = x0`.
///
/// Leaving the domain is reported through `left_domain` with the state at
/// the first step outside.
pub fn exp_map(fs: &FieldSet, u: &[f64], x0: &[f64], cfg: &IntegratorConfig) -> Result<FlowResult> {
    check_input(fs, u, x0)?;
    let n = fs.dim();
    if u.iter().all(|v| *v == 0.0) {
        return Ok(FlowResult { endpoint: x0.to_vec(), steps: 0, error_estimate: 0.0, left_domain: false });
    }
    let mut buf = vec![0.0; n];
    let rhs = |y: &[f64], dy: &mut [f64]| fs.combine_into(u, y, dy, &mut buf);
    let out = integrate(rhs, x0.to_vec(), n, fs.sys.domain(), cfg)?;
    Ok(FlowResult { endpoint: out.y, steps: out.steps, error_estimate: out.err, left_domain: out.left })
}

/// Jacobian of `u -> e^{u.X} x0` by the variational equation.
pub fn flow_jacobian(fs: &FieldSet, u: &[f64], x0: &[f64], cfg: &IntegratorConfig) -> Result<JacobianResult> {
    flow_jacobian_with(fs, u, x0, cfg, JacobianMethod::Variational, false)
}

pub fn flow_jacobian_with(
    fs: &FieldSet,
    u: &[f64],
    x0: &[f64],
    cfg: &IntegratorConfig,
    method: JacobianMethod,
    want_dx0: bool,
) -> Result<JacobianResult> {
    check_input(fs, u, x0)?;
    let n = fs.dim();
    let m = fs.len();
    match method {
        JacobianMethod::FiniteDifference { h } => {
            let base = exp_map(fs, u, x0, cfg)?;
            let mut left = base.left_domain;
            let mut du = DMatrix::zeros(n, m);
            for k in 0..m {
                let mut up = u.to_vec();
                let mut dn = u.to_vec();
                up[k] += h;
                dn[k] -= h;
                let a = exp_map(fs, &up, x0, cfg)?;
                let b = exp_map(fs, &dn, x0, cfg)?;
                left |= a.left_domain || b.left_domain;
                for l in 0..n {
                    du[(l, k)] = (a.endpoint[l] - b.endpoint[l]) / (2.0 * h);
                }
            }
            let dx0 = if want_dx0 {
                let mut d = DMatrix::zeros(n, n);
                for k in 0..n {
                    let mut xp = x0.to_vec();
                    let mut xm = x0.to_vec();
                    xp[k] += h;
                    xm[k] -= h;
                    let a = exp_map(fs, u, &xp, cfg)?;
                    let b = exp_map(fs, u, &xm, cfg)?;
                    for l in 0..n {
                        d[(l, k)] = (a.endpoint[l] - b.endpoint[l]) / (2.0 * h);
                    }
                }
                Some(d)
            } else {
                None
            };
            Ok(JacobianResult { endpoint: base.endpoint, du, dx0, left_domain: left })
        }
        JacobianMethod::Variational => {
            let extra = if want_dx0 { n * n } else { 0 };
            let dim = n + n * m + extra;
            let mut y0 = vec![0.0; dim];
            y0[..n].copy_from_slice(x0);
            if want_dx0 {
                for i in 0..n {
                    y0[n + n * m + i * n + i] = 1.0;
                }
            }
            let mut buf = vec![0.0; n];
            let rhs = |y: &[f64], dy: &mut [f64]| {
                let x = &y[..n];
                fs.combine_into(u, x, &mut dy[..n], &mut buf);
                let jz = fs.combine_jacobian(u, x);
                // S_k' = DZ S_k + X_k(x)
                for k in 0..m {
                    fs.column_into(k, x, &mut buf);
                    let s = &y[n + k * n..n + (k + 1) * n];
                    for l in 0..n {
                        let mut acc = buf[l];
                        for c in 0..n {
                            acc += jz[(l, c)] * s[c];
                        }
                        dy[n + k * n + l] = acc;
                    }
                }
                if want_dx0 {
                    let off = n + n * m;
                    for k in 0..n {
                        let s = &y[off + k * n..off + (k + 1) * n];
                        for l in 0..n {
                            let mut acc = 0.0;
                            for c in 0..n {
                                acc += jz[(l, c)] * s[c];
                            }
                            dy[off + k * n + l] = acc;
                        }
                    }
                }
            };
            let out = if u.iter().all(|v| *v == 0.0) {
                // Constant trajectory: S(1) = X(x0), Psi = I.
                let mut y = y0.clone();
                let mut buf = vec![0.0; n];
                for k in 0..m {
                    fs.column_into(k, x0, &mut buf);
                    y[n + k * n..n + (k + 1) * n].copy_from_slice(&buf);
                }
                Outcome { y, steps: 0, err: 0.0, left: false }
            } else {
                integrate(rhs, y0, n, fs.sys.domain(), cfg)?
            };
            let du = DMatrix::from_column_slice(n, m, &out.y[n..n + n * m]);
            let dx0 = want_dx0.then(|| DMatrix::from_column_slice(n, n, &out.y[n + n * m..]));
            Ok(JacobianResult { endpoint: out.y[..n].to_vec(), du, dx0, left_domain: out.left })
        }
    }
}

/// `e^{u_1.Z^1} ... e^{u_nu.Z^nu} x0`: the last family acts first, the first family last.
pub fn composed_exp(families: &[FieldSet], blocks: &[Vec<f64>], x0: &[f64], cfg: &IntegratorConfig) -> Result<FlowResult> {
    if families.len() != blocks.len() || families.is_empty() {
        return Err(GeomError::InvalidArgument("one coefficient block per family is required".into()));
    }
    let mut x = x0.to_vec();
    let mut steps = 0;
    let mut err = 0.0;
    for (fs, u) in families.iter().zip(blocks).rev() {
        let r = exp_map(fs, u, &x, cfg)?;
        steps += r.steps;
        err += r.error_estimate;
        if r.left_domain {
            return Ok(FlowResult { endpoint: r.endpoint, steps, error_estimate: err, left_domain: true });
        }
        x = r.endpoint;
    }
    Ok(FlowResult { endpoint: x, steps, error_estimate: err, left_domain: false })
}
