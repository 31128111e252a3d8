//! Carnot-Caratheodory balls: reachable-set sampling, membership, volumes,
//! doubling ratios, distances and generator comparison.

use cc_expr::Expr;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{build_chart, check_delta, sample_ball, Chart, ChartConfig, ChartMap, InvertOptions, InvertResult, InvertStatus};
use crate::error::{GeomError, Result};
use crate::flows::{exp_map, flow_jacobian_with, IntegratorConfig, JacobianMethod};
use crate::linalg::{self, RANK_TOL};
use crate::minors::{minor_norm_l2, minor_vector};
use crate::quadrature::{ball_nodes, default_direction_count, sphere_directions, unit_ball_volume};
use crate::rng::task_rng;
use crate::scaling::{scale_system, FieldSet};
use crate::system::{commutator, GradedField, GradedSystem, MAX_DIM};

/// Default number of constant pieces in a sampled control.
pub const DEFAULT_SEGMENTS: usize = 32;
/// `|u|` below this fraction of the unit chart radius counts as IN.
pub const RHO_IN: f64 = 0.9;
/// `|u|` at or beyond this radius counts as OUT.
pub const RHO_OUT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachableCloud {
    pub delta: Vec<f64>,
    pub seed: u64,
    pub requested: usize,
    pub segments: usize,
    /// Paths dropped because they left the domain.
    pub discarded: usize,
    /// Largest `sup_t |delta^{-d} a(t)|_2` over kept paths; always `< 1`.
    pub max_constraint_norm: f64,
    pub points: Vec<Vec<f64>>,
}

/// Piece counts used for the controls: each path is constant on `k` equal
/// pieces of the `segments` grid, with `k` cycling through the divisors
/// `1, 2, 4, ...` of `segments` and `segments` itself. Straight lines
/// (`k = 1`) reach the boundary of the ball; finer controls fill it in.
fn piece_counts(segments: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|k| *k <= segments).filter(|k| segments % k == 0).collect();
    if v.last() != Some(&segments) {
        v.push(segments);
    }
    v
}

/// Endpoints of `paths` piecewise-constant admissible controls from `x`.
///
/// Each piece draws `delta^{-d} a` uniformly from the open unit ball of
/// `R^q`, so every endpoint lies in `B(x, delta)`.
pub fn sample_reachable(
    sys: &GradedSystem,
    x: &[f64],
    delta: &[f64],
    paths: usize,
    segments: usize,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<ReachableCloud> {
    check_delta(delta)?;
    if segments == 0 {
        return Err(GeomError::InvalidArgument("segment count must be positive".into()));
    }
    if !sys.contains(x) {
        return Err(GeomError::OutsideDomain(x.to_vec()));
    }
    let fs = scale_system(sys, delta)?.all();
    let q = sys.q();
    let counts = piece_counts(segments);
    let rows = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let k = counts[i % counts.len()];
            let mut cur = x.to_vec();
            let mut norm: f64 = 0.0;
            for _ in 0..k {
                let b = sample_ball(&mut rng, q, 1.0);
                norm = norm.max(linalg::norm2(&b));
                let u: Vec<f64> = b.iter().map(|v| v / k as f64).collect();
                let r = exp_map(&fs, &u, &cur, cfg)?;
                if r.left_domain {
                    return Ok(None);
                }
                cur = r.endpoint;
            }
            Ok(Some((cur, norm)))
        })
        .collect::<Result<Vec<_>>>()?;
    let discarded = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(Vec<f64>, f64)> = rows.into_iter().flatten().collect();
    Ok(ReachableCloud {
        delta: delta.to_vec(),
        seed,
        requested: paths,
        segments,
        discarded,
        max_constraint_norm: kept.iter().map(|r| r.1).fold(0.0, f64::max),
        points: kept.into_iter().map(|r| r.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Membership {
    In,
    Out,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub status: Membership,
    pub rho_in: f64,
    pub rho_out: f64,
    pub inversion: InvertResult,
}

/// Classifies `y` against `B(x, delta)` through the chart map at `(x, delta)`.
///
/// `Phi(u)` with `|u| < 1` is the endpoint of a straight admissible path,
/// so `|u| < rho_in` is IN. The ball itself reaches somewhat beyond the
/// unit chart ball (curved paths gain in the bracket directions), so only
/// `|u| >= rho_out`, points off the leaf, and failed inversions are OUT;
/// everything between is UNCERTAIN.
pub fn ball_membership(sys: &GradedSystem, x: &[f64], delta: &[f64], y: &[f64], cfg: &ChartConfig) -> Result<MembershipReport> {
    let map = ChartMap::new(sys, x, delta, cfg.rank_tol, cfg.integrator)?;
    membership_on(&map, y)
}

fn membership_on(map: &ChartMap, y: &[f64]) -> Result<MembershipReport> {
    let inv = map.invert(y, &InvertOptions::with_radius(RHO_OUT))?;
    let status = match inv.status {
        InvertStatus::Inside if inv.norm < RHO_IN => Membership::In,
        InvertStatus::Inside => Membership::Uncertain,
        _ => Membership::Out,
    };
    Ok(MembershipReport { status, rho_in: RHO_IN, rho_out: RHO_OUT, inversion: inv })
}

impl MembershipReport {
    /// `y = Phi(u)` with `|u| < 1`: reached by a straight admissible path.
    pub fn reached(&self) -> bool {
        self.inversion.status == InvertStatus::Inside && self.inversion.norm < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Quadrature {
    /// Gauss-Legendre in the radius times a quasi-uniform direction set;
    /// `directions = None` picks a default for the chart dimension.
    Polar { directions: Option<usize>, radial: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::Polar { directions: None, radial: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMethod {
    /// `Vol(Phi(B(eta)))` by the change of variables.
    Chart,
    /// The rank at `x` is below the rank reached nearby; see [`leaf_rank_scan`].
    SupProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallReport {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub n0: usize,
    pub cols: Vec<usize>,
    pub method: VolumeMethod,
    pub eta: Option<f64>,
    pub volume: f64,
    pub stderr: f64,
    /// `|minorVector(delta^d X(x), n0)|_2 Vol(B_{n0}(eta))`.
    pub proxy: Option<f64>,
    pub proxy_ratio: Option<f64>,
    /// Largest rank of the scaled fields on the probe grid of [`leaf_rank_scan`].
    pub n_max: usize,
    pub doubling_ratio: Option<f64>,
    pub quadrature: Quadrature,
    pub seed: Option<u64>,
    pub cloud: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankScan {
    pub n0: usize,
    pub n_max: usize,
    /// `sup |minorVector(delta^d X(p), n_max)|_2` over the probe points.
    pub sup_minor: f64,
    pub probes: usize,
}

const SCAN_RADII: [f64; 3] = [0.5, 0.9, 0.999];

/// Probe points `e^{u.(delta^d X)} x` for `u` on a small grid of the unit
/// ball of `R^q` (axis and diagonal directions, radii 0.5, 0.9, 0.999), and
/// the largest rank of `delta^d X` seen there.
pub fn leaf_rank_scan(sys: &GradedSystem, x: &[f64], delta: &[f64], cfg: &ChartConfig) -> Result<RankScan> {
    check_delta(delta)?;
    let scaled = scale_system(sys, delta)?;
    let m0 = scaled.matrix(x)?;
    let n0 = linalg::rank(&m0, cfg.rank_tol);
    let q = sys.q();
    let full = sys.n().min(q);
    if n0 == full {
        let sup = if n0 == 0 { 0.0 } else { minor_norm_l2(&m0, n0) };
        return Ok(RankScan { n0, n_max: n0, sup_minor: sup, probes: 1 });
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..q {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; q];
            v[i] = s;
            dirs.push(v);
        }
        for j in i + 1..q {
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; q];
                v[i] = a / 2f64.sqrt();
                v[j] = b / 2f64.sqrt();
                dirs.push(v);
            }
        }
    }
    let fs = scaled.all();
    let pts: Vec<Vec<f64>> = dirs
        .par_iter()
        .flat_map_iter(|d| SCAN_RADII.iter().map(move |r| d.iter().map(|v| v * r).collect::<Vec<f64>>()))
        .map(|u| exp_map(&fs, &u, x, &cfg.integrator))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|r| !r.left_domain)
        .map(|r| r.endpoint)
        .collect();
    let mats: Vec<DMatrix<f64>> = std::iter::once(m0).chain(pts.iter().map(|p| fs.matrix(p))).collect();
    let n_max = mats.iter().map(|m| linalg::rank(m, cfg.rank_tol)).max().unwrap_or(0);
    let sup_minor = if n_max == 0 { 0.0 } else { mats.iter().map(|m| minor_norm_l2(m, n_max)).fold(0.0, f64::max) };
    Ok(RankScan { n0, n_max, sup_minor, probes: mats.len() })
}

/// `Vol(Phi(B(eta))) = int_{B(eta)} |minorVector(dPhi(u), n0)|_2 du` on a built chart.
pub fn volume_on_chart(chart: &Chart, quad: &Quadrature) -> Result<(f64, f64)> {
    let map = &chart.map;
    let n0 = map.n0();
    let eta = chart.eta;
    let gram = |u: &[f64]| -> Result<f64> {
        let jr = map.jacobian(u)?;
        if jr.left_domain {
            return Err(GeomError::LeftDomain);
        }
        Ok(linalg::gram_volume(&jr.du))
    };
    match *quad {
        Quadrature::Polar { directions, radial } => {
            if radial == 0 {
                return Err(GeomError::InvalidArgument("radial node count must be positive".into()));
            }
            let dirs = sphere_directions(n0, directions.unwrap_or_else(|| default_direction_count(n0)));
            let nodes = ball_nodes(n0, eta, &dirs, radial);
            let vals = nodes.par_iter().map(|(u, w)| Ok(w * gram(u)?)).collect::<Result<Vec<f64>>>()?;
            Ok((vals.iter().sum(), 0.0))
        }
        Quadrature::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(GeomError::InvalidArgument("Monte Carlo volume needs at least two samples".into()));
            }
            let vals = (0..samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = task_rng(seed, i as u64);
                    gram(&sample_ball(&mut rng, n0, eta))
                })
                .collect::<Result<Vec<f64>>>()?;
            let ball = unit_ball_volume(n0) * eta.powi(n0 as i32);
            let n = samples as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok((ball * mean, ball * (var / n).sqrt()))
        }
    }
}

fn chart_report(chart: &Chart, scan: &RankScan, quad: &Quadrature) -> Result<BallReport> {
    let map = &chart.map;
    let n0 = map.n0();
    let (volume, stderr) = volume_on_chart(chart, quad)?;
    let m = map.scaled().matrix(&map.x0)?;
    let proxy = minor_norm_l2(&m, n0) * unit_ball_volume(n0) * chart.eta.powi(n0 as i32);
    Ok(BallReport {
        x: map.x0.clone(),
        delta: map.delta.clone(),
        n0,
        cols: map.basis.cols.clone(),
        method: VolumeMethod::Chart,
        eta: Some(chart.eta),
        volume,
        stderr,
        proxy: Some(proxy),
        proxy_ratio: Some(volume / proxy),
        n_max: scan.n_max,
        doubling_ratio: None,
        quadrature: *quad,
        seed: match quad {
            Quadrature::MonteCarlo { seed, .. } => Some(*seed),
            _ => None,
        },
        cloud: None,
    })
}

fn proxy_report(sys: &GradedSystem, x: &[f64], delta: &[f64], scan: &RankScan, quad: &Quadrature, rank_tol: f64) -> Result<BallReport> {
    let basis = crate::chart::select_basis(sys, x, delta, rank_tol)?;
    Ok(BallReport {
        x: x.to_vec(),
        delta: delta.to_vec(),
        n0: scan.n0,
        cols: basis.cols,
        method: VolumeMethod::SupProxy,
        eta: None,
        volume: unit_ball_volume(scan.n_max) * scan.sup_minor,
        stderr: 0.0,
        proxy: None,
        proxy_ratio: None,
        n_max: scan.n_max,
        doubling_ratio: None,
        quadrature: *quad,
        seed: None,
        cloud: None,
    })
}

/// Ball volume at `(x, delta)`.
///
/// Normally `Vol(Phi(B_{n0}(eta)))` on the chart. When the scaled fields
/// gain rank away from `x` (the ball is thicker than the leaf of the chart
/// at its center), the chart sees only a slice; the report then falls back
/// to `Vol(B_{n_max}(1)) sup_p |minorVector(delta^d X(p), n_max)|_2`.
pub fn volume(sys: &GradedSystem, x: &[f64], delta: &[f64], cfg: &ChartConfig, quad: &Quadrature) -> Result<BallReport> {
    let scan = leaf_rank_scan(sys, x, delta, cfg)?;
    if scan.n_max > scan.n0 {
        return proxy_report(sys, x, delta, &scan, quad, cfg.rank_tol);
    }
    let chart = build_chart(sys, x, delta, cfg)?;
    chart_report(&chart, &scan, quad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingReport {
    pub ratio: f64,
    /// Chart radius shared by both balls, `min(eta(delta), eta(2 delta))`.
    pub eta: Option<f64>,
    pub small: BallReport,
    pub large: BallReport,
}

/// `volume(2 delta) / volume(delta)` with the same chart radius for both balls.
pub fn doubling_ratio(sys: &GradedSystem, x: &[f64], delta: &[f64], cfg: &ChartConfig, quad: &Quadrature) -> Result<DoublingReport> {
    check_delta(delta)?;
    let big: Vec<f64> = delta.iter().map(|d| 2.0 * d).collect();
    check_delta(&big)?;
    let scans = [leaf_rank_scan(sys, x, delta, cfg)?, leaf_rank_scan(sys, x, &big, cfg)?];
    if scans.iter().any(|s| s.n_max > s.n0) {
        let small = proxy_or_chart(sys, x, delta, &scans[0], cfg, quad)?;
        let large = proxy_or_chart(sys, x, &big, &scans[1], cfg, quad)?;
        return Ok(finish_doubling(small, large, None));
    }
    let a = build_chart(sys, x, delta, cfg)?;
    let b = build_chart(sys, x, &big, cfg)?;
    let eta = a.eta.min(b.eta);
    let fixed = ChartConfig { eta: Some(eta), ..cfg.clone() };
    let a = if a.eta > eta { build_chart(sys, x, delta, &fixed)? } else { a };
    let b = if b.eta > eta { build_chart(sys, x, &big, &fixed)? } else { b };
    let small = chart_report(&a, &scans[0], quad)?;
    let large = chart_report(&b, &scans[1], quad)?;
    Ok(finish_doubling(small, large, Some(eta)))
}

fn proxy_or_chart(sys: &GradedSystem, x: &[f64], delta: &[f64], scan: &RankScan, cfg: &ChartConfig, quad: &Quadrature) -> Result<BallReport> {
    if scan.n_max > scan.n0 {
        proxy_report(sys, x, delta, scan, quad, cfg.rank_tol)
    } else {
        chart_report(&build_chart(sys, x, delta, cfg)?, scan, quad)
    }
}

fn finish_doubling(mut small: BallReport, large: BallReport, eta: Option<f64>) -> DoublingReport {
    let ratio = large.volume / small.volume;
    small.doubling_ratio = Some(ratio);
    DoublingReport { ratio, eta, small, large }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    /// Largest probed scale at which `y` was not reached.
    pub lo: f64,
    /// Smallest probed scale at which `y` was reached; infinite when the
    /// unit scale does not reach `y`.
    pub hi: f64,
    /// `y` is off the leaf through `x`.
    pub infinite: bool,
    pub probes: usize,
    pub tol: f64,
}

/// `rho_r(x, y) = inf { s : y in B(x, s r) }` bracketed by bisection over
/// `s in (0, 1]`, counting `y` as reached when it is the endpoint of a
/// straight admissible path (see [`MembershipReport::reached`]).
pub fn cc_distance(sys: &GradedSystem, x: &[f64], y: &[f64], r: &[f64], tol: f64, cfg: &ChartConfig) -> Result<DistanceReport> {
    if r.len() != sys.nu() || r.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) || !r.iter().any(|v| *v == 1.0) {
        return Err(GeomError::InvalidArgument(format!("direction {r:?} must lie in (0,1]^nu with a unit component")));
    }
    if !(tol > 0.0) {
        return Err(GeomError::InvalidArgument("bisection tolerance must be positive".into()));
    }
    if x.len() != y.len() {
        return Err(GeomError::InvalidArgument("points must have the same dimension".into()));
    }
    if linalg::dist2(x, y) == 0.0 {
        return Ok(DistanceReport { lo: 0.0, hi: 0.0, infinite: false, probes: 0, tol });
    }
    let probe = |s: f64| -> Result<MembershipReport> {
        let delta: Vec<f64> = r.iter().map(|v| v * s).collect();
        ball_membership(sys, x, &delta, y, cfg)
    };
    let top = probe(1.0)?;
    let mut probes = 1;
    if !top.reached() {
        let infinite = top.inversion.status == InvertStatus::OffLeaf;
        let lo = if infinite { f64::INFINITY } else { 1.0 };
        return Ok(DistanceReport { lo, hi: f64::INFINITY, infinite, probes, tol });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if !probe(mid)?.reached() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DistanceReport { lo, hi, infinite: false, probes, tol })
}

/// Fields `X_w` for words `w` of length at most `order` in the generators:
/// `X_{(i)} = W_i` and `X_{(i, w)} = [W_i, X_w]`, with degree the sum of the
/// letters' degrees. Length-two words use `i < j` only; fields that vanish or
/// repeat an earlier field of the same degree up to sign at sample points
/// are dropped.
pub fn bracket_closure(w: &GradedSystem, order: usize) -> Result<GradedSystem> {
    if order == 0 {
        return Err(GeomError::InvalidArgument("bracket order must be at least 1".into()));
    }
    let coords = w.coords().to_vec();
    let dom = w.domain();
    let mut rng = task_rng(0xb7ac, 0);
    let pts: Vec<Vec<f64>> = (0..16).map(|_| dom.min.iter().zip(&dom.max).map(|(a, b)| rng.random_range(*a..*b)).collect()).collect();
    let mut fields: Vec<GradedField> = w.fields().to_vec();
    let mut values: Vec<Vec<f64>> = (0..w.q()).map(|j| pts.iter().flat_map(|p| w.eval_field(j, p)).collect()).collect();
    let mut level: Vec<usize> = (0..w.q()).collect();
    for len in 2..=order {
        let mut next = Vec::new();
        for i in 0..w.q() {
            for &k in &level {
                if len == 2 && k <= i {
                    continue;
                }
                let coeffs: Vec<Expr> = commutator(&w.fields()[i].coeffs, &fields[k].coeffs, &coords);
                let degree: Vec<f64> = w.degree(i).iter().zip(&fields[k].degree).map(|(a, b)| a + b).collect();
                let cand = GradedField { coeffs, degree };
                let sub = GradedSystem::new(coords.clone(), w.nu(), vec![cand.clone()], dom.clone(), None);
                let vals: Vec<f64> = match &sub {
                    Ok(s) => pts.iter().flat_map(|p| s.eval_field(0, p)).collect(),
                    Err(_) => continue,
                };
                let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if scale <= 1e-12 {
                    continue;
                }
                let repeat = fields.iter().zip(&values).any(|(f, v)| f.degree == cand.degree && parallel(v, &vals));
                if repeat {
                    continue;
                }
                if fields.len() >= MAX_DIM {
                    return Err(GeomError::TooLarge(fields.len() + 1));
                }
                fields.push(cand);
                values.push(vals);
                next.push(fields.len() - 1);
            }
        }
        level = next;
    }
    GradedSystem::new(coords, w.nu(), fields, dom.clone(), None)
}

fn parallel(a: &[f64], b: &[f64]) -> bool {
    let na = linalg::norm2(a);
    let nb = linalg::norm2(b);
    if na == 0.0 || nb == 0.0 {
        return false;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot.abs() / (na * nb) - 1.0).abs() <= 1e-10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteerOptions {
    pub segments: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for SteerOptions {
    fn default() -> Self {
        SteerOptions { segments: 8, restarts: 4, max_iter: 60 }
    }
}

/// Endpoint and Jacobian of the piecewise-constant control `b` (`k` rows of `p`).
fn steer_eval(fs: &FieldSet, b: &[f64], k: usize, x: &[f64], cfg: &IntegratorConfig) -> Result<Option<(Vec<f64>, DMatrix<f64>)>> {
    let p = fs.len();
    let n = fs.dim();
    let mut cur = x.to_vec();
    let mut jac = DMatrix::zeros(n, k * p);
    for s in 0..k {
        let u: Vec<f64> = b[s * p..(s + 1) * p].iter().map(|v| v / k as f64).collect();
        let jr = flow_jacobian_with(fs, &u, &cur, cfg, JacobianMethod::Variational, true)?;
        if jr.left_domain {
            return Ok(None);
        }
        let dx = jr.dx0.expect("requested");
        if s > 0 {
            let prev = jac.columns(0, s * p).into_owned();
            jac.columns_mut(0, s * p).copy_from(&(&dx * prev));
        }
        jac.columns_mut(s * p, p).copy_from(&(jr.du / k as f64));
        cur = jr.endpoint;
    }
    Ok(Some((cur, jac)))
}

fn piece_sup(b: &[f64], p: usize) -> f64 {
    b.chunks(p).map(linalg::norm2).fold(0.0, f64::max)
}

/// Looks for a `k`-piece control with `sup |b_s| < 1` steering `x` to `y`
/// under the fields `fs`: Gauss-Newton on the endpoint, with steps in the
/// null space of its Jacobian that reduce `sum |b_s|^8`. Returns the best
/// admissible sup-norm found.
pub fn steer(fs: &FieldSet, x: &[f64], y: &[f64], opts: &SteerOptions, seed: u64, cfg: &IntegratorConfig) -> Result<Option<f64>> {
    let p = fs.len();
    let k = opts.segments.max(1);
    let gap = linalg::dist2(x, y);
    if gap == 0.0 {
        return Ok(Some(0.0));
    }
    let tol = 1e-7 * gap;
    let m0 = fs.matrix(x);
    let straight = linalg::pinv(&m0, RANK_TOL) * DVector::from_iterator(y.len(), y.iter().zip(x).map(|(a, b)| a - b));
    let mut rng = task_rng(seed, 0);
    for attempt in 0..=opts.restarts {
        let mut b: Vec<f64> = (0..k).flat_map(|_| straight.iter().copied()).collect();
        if attempt > 0 {
            for s in 0..k {
                let v = sample_ball(&mut rng, p, 0.5);
                for (bi, vi) in b[s * p..(s + 1) * p].iter_mut().zip(v) {
                    *bi += vi;
                }
            }
        }
        let g = |bb: &[f64]| bb.chunks(p).map(|c| linalg::norm2(c).powi(8)).sum::<f64>();
        let mut budget = opts.max_iter;
        'outer: while budget > 0 {
            // Newton onto the target.
            let mut hit = None;
            for _ in 0..12 {
                budget = budget.saturating_sub(1);
                let Some((end, jac)) = steer_eval(fs, &b, k, x, cfg)? else { break 'outer };
                let r = DVector::from_iterator(y.len(), end.iter().zip(y).map(|(a, c)| a - c));
                if r.norm() <= tol {
                    hit = Some(jac);
                    break;
                }
                let newton = linalg::pinv(&jac, RANK_TOL) * &r;
                for (bi, nw) in b.iter_mut().zip(newton.iter()) {
                    *bi -= nw;
                }
                if b.iter().any(|v| !v.is_finite()) {
                    break 'outer;
                }
            }
            let Some(jac) = hit else { break };
            let sup = piece_sup(&b, p);
            if sup < 1.0 {
                return Ok(Some(sup));
            }
            // Lower sum |b_s|^8 along the null space of the endpoint map.
            let grad = DVector::from_iterator(
                b.len(),
                b.chunks(p).flat_map(|c| {
                    let s = linalg::norm2(c).powi(6);
                    c.iter().map(move |v| s * v).collect::<Vec<_>>()
                }),
            );
            let jp = linalg::pinv(&jac, RANK_TOL);
            let null = &grad - &jp * (&jac * &grad);
            if null.norm() == 0.0 {
                break;
            }
            let g0 = g(&b);
            let mut t = 0.2 * linalg::norm2(&b) / null.norm();
            loop {
                let cand: Vec<f64> = b.iter().zip(null.iter()).map(|(a, d)| a - t * d).collect();
                if g(&cand) < g0 {
                    b = cand;
                    break;
                }
                t *= 0.5;
                if t * null.norm() < 1e-9 * linalg::norm2(&b) {
                    break 'outer;
                }
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorLevel {
    pub eta_prime: f64,
    pub targets: usize,
    pub reached: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorRow {
    pub delta: Vec<f64>,
    /// Largest probed `eta'` with every target reached.
    pub eta_prime_lo: f64,
    /// Next probed value above `eta_prime_lo` (equal to it at `eta' = 1`).
    pub eta_prime_hi: f64,
    pub levels: Vec<GeneratorLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub rows: Vec<GeneratorRow>,
    pub eta_prime_min: f64,
    /// Every row's `eta_prime_lo` lies within one grid step of the others.
    pub uniform: bool,
    pub samples: usize,
    pub seed: u64,
    pub steer: SteerOptions,
}

/// Smallest `eta'` probed before giving up on a row.
pub const MIN_ETA_PRIME: f64 = 1.0 / 64.0;

/// For each `delta`, the largest `eta' in {1, 1/2, 1/4, ...}` such that every
/// sampled point `Phi(u)`, `|u| < 1`, of the generated system's chart at
/// `(x, eta' delta)` is steered to by a `W`-control admissible at `delta`.
#[allow(clippy::too_many_arguments)]
pub fn generator_comparison(
    generated: &GradedSystem,
    w: &GradedSystem,
    x: &[f64],
    deltas: &[Vec<f64>],
    samples: usize,
    seed: u64,
    opts: &SteerOptions,
    cfg: &ChartConfig,
) -> Result<GeneratorReport> {
    if generated.n() != w.n() || generated.nu() != w.nu() {
        return Err(GeomError::InvalidArgument("generators and generated system must share coordinates and parameters".into()));
    }
    let mut rows = Vec::new();
    for (di, delta) in deltas.iter().enumerate() {
        let fs = scale_system(w, delta)?.all();
        let mut levels = Vec::new();
        let mut ep = 1.0;
        let mut found = None;
        while ep >= MIN_ETA_PRIME {
            let small: Vec<f64> = delta.iter().map(|d| d * ep).collect();
            let map = ChartMap::new(generated, x, &small, cfg.rank_tol, cfg.integrator)?;
            let task = (di as u64) << 32 | levels.len() as u64;
            let targets = (0..samples)
                .map(|i| {
                    let mut rng = task_rng(seed ^ task, i as u64);
                    let u = sample_ball(&mut rng, map.n0(), 1.0);
                    map.phi(&u)
                })
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<Vec<f64>> = targets.into_iter().filter(|r| !r.left_domain).map(|r| r.endpoint).collect();
            let outcomes = targets
                .par_iter()
                .enumerate()
                .map(|(i, y)| steer(&fs, x, y, opts, seed ^ task ^ (i as u64).rotate_left(17), &cfg.integrator).map(|r| r.is_some()))
                .collect::<Result<Vec<bool>>>()?;
            let reached = outcomes.iter().filter(|b| **b).count();
            levels.push(GeneratorLevel { eta_prime: ep, targets: targets.len(), reached });
            if reached == targets.len() {
                found = Some(ep);
                break;
            }
            ep *= 0.5;
        }
        let lo = found.unwrap_or(0.0);
        let hi = if lo == 1.0 { 1.0 } else if lo == 0.0 { MIN_ETA_PRIME } else { 2.0 * lo };
        rows.push(GeneratorRow { delta: delta.clone(), eta_prime_lo: lo, eta_prime_hi: hi, levels });
    }
    let min = rows.iter().map(|r| r.eta_prime_lo).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(|r| r.eta_prime_lo).fold(0.0, f64::max);
    Ok(GeneratorReport { rows, eta_prime_min: min, uniform: min > 0.0 && max <= 2.0 * min, samples, seed, steer: *opts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorWindow {
    pub n0: usize,
    pub samples: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `sup |(delta^{d_j} X_j) det (delta^d X)_{I,J}| / |minorVector(delta^d X, n0)|_2`
    /// over sample points, all `j`, and all `n0 x n0` minors `(I, J)`.
    pub derivative_constant: f64,
}

/// Minor behavior over reachable points `y` of `B(x, delta)`: the window of
/// `|minorVector(delta^d X(y), n0)| / |minorVector(delta^d X(x), n0)|` and the
/// constant dominating derivatives of single minors along the scaled fields.
pub fn minor_window(sys: &GradedSystem, x: &[f64], delta: &[f64], samples: usize, seed: u64, cfg: &ChartConfig) -> Result<MinorWindow> {
    let scaled = scale_system(sys, delta)?;
    let m0 = scaled.matrix(x)?;
    let n0 = linalg::rank(&m0, cfg.rank_tol);
    if n0 == 0 {
        return Err(GeomError::ZeroColumns);
    }
    let base = minor_norm_l2(&m0, n0);
    let cloud = sample_reachable(sys, x, delta, samples, DEFAULT_SEGMENTS, seed, &cfg.integrator)?;
    let all = scaled.all();
    let h = 1e-4;
    let rows = cloud
        .points
        .par_iter()
        .map(|y| {
            let m = all.matrix(y);
            let norm = minor_norm_l2(&m, n0);
            let mut worst: f64 = 0.0;
            for j in 0..sys.q() {
                let fj = scaled.columns(&[j]);
                let a = exp_map(&fj, &[h], y, &cfg.integrator)?;
                let b = exp_map(&fj, &[-h], y, &cfg.integrator)?;
                if a.left_domain || b.left_domain {
                    continue;
                }
                let ma = minor_vector(&all.matrix(&a.endpoint), n0);
                let mb = minor_vector(&all.matrix(&b.endpoint), n0);
                for (va, vb) in ma.values.iter().zip(&mb.values) {
                    worst = worst.max(((va - vb) / (2.0 * h)).abs());
                }
            }
            Ok((norm / base, if norm > 0.0 { worst / norm } else { f64::INFINITY }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MinorWindow {
        n0,
        samples: rows.len(),
        min_ratio: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        max_ratio: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        derivative_constant: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}
