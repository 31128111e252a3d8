//! Whether a candidate field `(X_{q+1}, d_{q+1})` is controlled by a graded
//! system: coefficients of the scaled candidate over the scaled fields,
//! their derivatives, and minor ratios across a grid of centers and radii.

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::balls::{sample_reachable, DEFAULT_SEGMENTS};
use crate::chart::{check_delta, select_basis_in};
use crate::error::{GeomError, Result};
use crate::flows::{exp_map, IntegratorConfig};
use crate::linalg;
use crate::minors::minor_vector;
use crate::scaling::{scale_system, ScaledSystem};
use crate::system::{GradedField, GradedSystem};

/// The system with `extra` appended as its last field.
fn with_extra(sys: &GradedSystem, extra: &GradedField) -> Result<GradedSystem> {
    sys.clone().with_candidate(extra.clone())?.augmented()
}

/// Coefficients at `y` from the scaled matrix of the augmented system
/// (last column is the candidate), and the relative reconstruction residual.
fn cramer_in(m: &DMatrix<f64>, rank_tol: f64) -> Result<(Vec<f64>, f64)> {
    let q = m.ncols() - 1;
    let base = m.columns(0, q).into_owned();
    let extra = m.column(q).into_owned();
    let basis = select_basis_in(&base, rank_tol).map_err(|_| GeomError::DegenerateMinor)?;
    let lead = linalg::select(&base, &basis.rows, &basis.cols);
    let d = linalg::det(&lead);
    if d == 0.0 || !d.is_finite() {
        return Err(GeomError::DegenerateMinor);
    }
    let mut c = vec![0.0; q];
    for (l, &j) in basis.cols.iter().enumerate() {
        let mut sub = lead.clone();
        for (r, &i) in basis.rows.iter().enumerate() {
            sub[(r, l)] = extra[i];
        }
        c[j] = linalg::det(&sub) / d;
    }
    let recon = &base * nalgebra::DVector::from_column_slice(&c) - &extra;
    let scale = linalg::op_norm(m).max(f64::MIN_POSITIVE);
    Ok((c, recon.norm() / scale))
}

/// Coefficients `c_j` with `delta^{d_{q+1}} X_{q+1}(x) = sum_j c_j delta^{d_j} X_j(x)`
/// by Cramer's rule on the leading minor of the selected basis; entries
/// outside the basis are zero.
pub fn cramer_coefficients(sys: &GradedSystem, extra: &GradedField, x: &[f64], delta: &[f64], rank_tol: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    let aug = with_extra(sys, extra)?;
    let m = scale_system(&aug, delta)?.matrix(x)?;
    Ok(cramer_in(&m, rank_tol)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlConfig {
    /// Fraction of `delta` used for the ball of sample points.
    pub tau: f64,
    pub samples: usize,
    pub segments: usize,
    /// Highest derivative order along the scaled fields.
    pub order: usize,
    /// Flow time for central differences.
    pub h: f64,
    pub seed: u64,
    pub rank_tol: f64,
    /// Slope of `log10 sigma` per decade of `1/delta` at or below which the verdict is controlled.
    pub bounded_slope: f64,
    /// Slope at or above which monotone growth is not controlled.
    pub growth_slope: f64,
    /// `|slope|` at or below which a controlled verdict is flagged marginal.
    pub marginal_band: f64,
    /// Relative reconstruction residual above which the candidate is out of the span.
    pub span_tol: f64,
    pub integrator: IntegratorConfig,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            tau: 0.5,
            samples: 256,
            segments: DEFAULT_SEGMENTS,
            order: 1,
            h: 1e-4,
            seed: 0,
            rank_tol: linalg::RANK_TOL,
            bounded_slope: 0.05,
            growth_slope: 0.1,
            marginal_band: 0.05,
            span_tol: 1e-6,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Controlled,
    NotControlled,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    /// `max_mu delta_mu`, the abscissa of the trend fit.
    pub scale: f64,
    pub points: usize,
    /// `sup |c_j(y)|` over sample points.
    pub coeff_sup: f64,
    /// `sup |(delta^d X)^alpha c_j(y)|` over points and `1 <= |alpha| <= order`.
    pub derivative_sup: f64,
    pub sigma: f64,
    /// `|det_{n x n}(delta^d X)(x)|_inf / |det_{n x n}(delta^d X^)(x)|_inf` at the augmented rank.
    pub kappa1: f64,
    pub reconstruction: f64,
    pub in_span: bool,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trend {
    /// Distinct scales, decreasing, with the largest `sigma` seen at each.
    pub scales: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Least-squares slope of `log10 sigma` against `log10 (1/scale)`.
    pub slope: f64,
    /// `sigma` never decreases (beyond 1%) as the scale shrinks.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub condition: &'static str,
    pub probes: Vec<Probe>,
    pub trend: Trend,
    pub verdict: Verdict,
    pub marginal: bool,
    pub sigma_max: f64,
    pub kappa1_min: f64,
    pub reconstruction_max: f64,
    pub config: ControlConfig,
}

/// `X_{w_1} X_{w_2} ... c(y)` for a word `w` of scaled-field indices, by
/// nested central differences along the flows; `None` if a flow leaves the domain.
fn word_derivative(scaled: &ScaledSystem, y: &[f64], word: &[usize], cfg: &ControlConfig) -> Result<Option<Vec<f64>>> {
    let Some((&j, rest)) = word.split_first() else {
        return Ok(Some(cramer_in(&scaled.matrix(y)?, cfg.rank_tol)?.0));
    };
    let fj = scaled.columns(&[j]);
    let a = exp_map(&fj, &[cfg.h], y, &cfg.integrator)?;
    let b = exp_map(&fj, &[-cfg.h], y, &cfg.integrator)?;
    if a.left_domain || b.left_domain {
        return Ok(None);
    }
    let (Some(ca), Some(cb)) = (word_derivative(scaled, &a.endpoint, rest, cfg)?, word_derivative(scaled, &b.endpoint, rest, cfg)?) else {
        return Ok(None);
    };
    Ok(Some(ca.iter().zip(&cb).map(|(p, m)| (p - m) / (2.0 * cfg.h)).collect()))
}

/// Largest `|(delta^d X)^alpha c_j(y)|` over words of length `1..=order`.
fn derivative_sup(scaled: &ScaledSystem, y: &[f64], cfg: &ControlConfig) -> Result<f64> {
    let q = scaled.sys.q() - 1;
    let mut worst: f64 = 0.0;
    for len in 1..=cfg.order {
        for word in (0..len).map(|_| 0..q).multi_cartesian_product() {
            if let Some(d) = word_derivative(scaled, y, &word, cfg)? {
                worst = d.iter().fold(worst, |m, v| m.max(v.abs()));
            }
        }
    }
    Ok(worst)
}

fn kappa1(aug: &DMatrix<f64>, rank_tol: f64) -> f64 {
    let q = aug.ncols() - 1;
    let k = linalg::rank(aug, rank_tol);
    if k == 0 {
        return 1.0;
    }
    let top = minor_vector(aug, k).norm_linf();
    let base = if k <= q.min(aug.nrows()) { minor_vector(&aug.columns(0, q).into_owned(), k).norm_linf() } else { 0.0 };
    base / top
}

fn run_probe(aug: &GradedSystem, sys: &GradedSystem, x: &[f64], delta: &[f64], idx: usize, cfg: &ControlConfig) -> Result<Probe> {
    let scale = delta.iter().fold(0.0f64, |m, v| m.max(*v));
    let scaled = scale_system(aug, delta)?;
    let m0 = scaled.matrix(x)?;
    let k1 = kappa1(&m0, cfg.rank_tol);
    let small: Vec<f64> = delta.iter().map(|d| d * cfg.tau).collect();
    let cloud = sample_reachable(sys, x, &small, cfg.samples, cfg.segments, cfg.seed ^ (idx as u64).wrapping_mul(0x9e37_79b9), &cfg.integrator)?;
    let pts: Vec<Vec<f64>> = std::iter::once(x.to_vec()).chain(cloud.points).collect();
    let rows = pts
        .par_iter()
        .map(|y| {
            let (c, rec) = cramer_in(&scaled.matrix(y)?, cfg.rank_tol)?;
            let d = if cfg.order > 0 { derivative_sup(&scaled, y, cfg)? } else { 0.0 };
            Ok((c.iter().fold(0.0f64, |m, v| m.max(v.abs())), d, rec))
        })
        .collect::<Result<Vec<_>>>()?;
    let coeff_sup = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let derivative_sup = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let reconstruction = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(Probe {
        x: x.to_vec(),
        delta: delta.to_vec(),
        scale,
        points: pts.len(),
        coeff_sup,
        derivative_sup,
        sigma: coeff_sup.max(derivative_sup),
        kappa1: k1,
        reconstruction,
        in_span: reconstruction <= cfg.span_tol,
        skipped: None,
    })
}

fn trend(probes: &[Probe]) -> Trend {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for p in probes.iter().filter(|p| p.skipped.is_none()) {
        match pairs.iter_mut().find(|(s, _)| (s / p.scale - 1.0).abs() < 1e-12) {
            Some(e) => e.1 = e.1.max(p.sigma),
            None => pairs.push((p.scale, p.sigma)),
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let scales: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sigma: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let xs: Vec<f64> = scales.iter().map(|s| -s.log10()).collect();
    let ys: Vec<f64> = sigma.iter().map(|s| s.max(f64::MIN_POSITIVE).log10()).collect();
    let n = xs.len() as f64;
    let slope = if xs.len() < 2 {
        f64::NAN
    } else {
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        num / den
    };
    let monotone = sigma.windows(2).all(|w| w[1] >= 0.99 * w[0]);
    Trend { scales, sigma, slope, monotone }
}

/// Evaluates the candidate over every `(x, delta)` pair of the grids and
/// classifies the growth of the coefficient sup-norms as `delta` shrinks.
///
/// Probes that fail (degenerate basis, domain exit at the center) are kept
/// with a `skipped` reason. A candidate outside the span at any probe is
/// not controlled.
pub fn check_control(sys: &GradedSystem, extra: &GradedField, xs: &[Vec<f64>], deltas: &[Vec<f64>], cfg: &ControlConfig) -> Result<ControlReport> {
    if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
        return Err(GeomError::InvalidArgument(format!("tau {} must lie in (0, 1]", cfg.tau)));
    }
    for d in deltas {
        check_delta(d)?;
    }
    let aug = with_extra(sys, extra)?;
    let grid: Vec<(usize, &Vec<f64>, &Vec<f64>)> =
        deltas.iter().flat_map(|d| xs.iter().map(move |x| (x, d))).enumerate().map(|(i, (x, d))| (i, x, d)).collect();
    let probes: Vec<Probe> = grid
        .iter()
        .map(|(i, x, d)| {
            run_probe(&aug, sys, x, d, *i, cfg).unwrap_or_else(|e| Probe {
                x: x.to_vec(),
                delta: d.to_vec(),
                scale: d.iter().fold(0.0f64, |m, v| m.max(*v)),
                points: 0,
                coeff_sup: f64::NAN,
                derivative_sup: f64::NAN,
                sigma: f64::NAN,
                kappa1: f64::NAN,
                reconstruction: f64::NAN,
                in_span: true,
                skipped: Some(e.to_string()),
            })
        })
        .collect();
    let tr = trend(&probes);
    let live: Vec<&Probe> = probes.iter().filter(|p| p.skipped.is_none()).collect();
    let sigma_max = live.iter().map(|p| p.sigma).fold(0.0, f64::max);
    let kappa1_min = live.iter().map(|p| p.kappa1).fold(f64::INFINITY, f64::min);
    let reconstruction_max = live.iter().map(|p| p.reconstruction).fold(0.0, f64::max);
    let verdict = if live.iter().any(|p| !p.in_span) {
        Verdict::NotControlled
    } else if !tr.slope.is_finite() || !sigma_max.is_finite() {
        Verdict::Inconclusive
    } else if tr.slope >= cfg.growth_slope && tr.monotone {
        Verdict::NotControlled
    } else if tr.slope <= cfg.bounded_slope {
        Verdict::Controlled
    } else {
        Verdict::Inconclusive
    };
    let marginal = verdict == Verdict::Controlled && tr.slope.abs() <= cfg.marginal_band;
    Ok(ControlReport {
        condition: "P3",
        probes,
        trend: tr,
        verdict,
        marginal,
        sigma_max,
        kappa1_min,
        reconstruction_max,
        config: *cfg,
    })
}

/// The radius grid used for two-parameter trend checks: `(t, t)`,
/// `(t, t/3)` and `(t/3, t)` for `t` in `ts`.
pub fn line_grid(ts: &[f64]) -> Vec<Vec<f64>> {
    ts.iter().flat_map(|t| [vec![*t, *t], vec![*t, t / 3.0], vec![t / 3.0, *t]]).collect()
}

pub const DEFAULT_TS: [f64; 5] = [0.1, 0.03, 0.01, 0.003, 0.001];
