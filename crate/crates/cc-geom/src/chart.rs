//! Scaling charts `Phi(u) = e^{u.(delta^d X)_J} x0`, the pulled-back frame,
//! and the structure equation for its coefficient matrix `A`.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::flows::{exp_map, flow_jacobian, FlowResult, IntegratorConfig, JacobianResult};
use crate::linalg::{self, RANK_TOL};
use crate::minors::max_minor_in_columns;
use crate::quadrature::sphere_directions;
use crate::rng::task_rng;
use crate::scaling::{scale_system, FieldSet, ScaledSystem};
use crate::system::GradedSystem;

/// Contraction bound for `A`.
pub const KAPPA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisSelection {
    pub n0: usize,
    /// Selected columns `J`, ascending.
    pub cols: Vec<usize>,
    /// Rows attaining the largest minor in `J`.
    pub rows: Vec<usize>,
    pub minor_linf: f64,
}

/// Rank `n0` of `delta^d X(x)` and the column subset with the largest
/// `n0 x n0` minor; ties go to the lexicographically smallest `J`.
pub fn select_basis(sys: &GradedSystem, x: &[f64], delta: &[f64], rank_tol: f64) -> Result<BasisSelection> {
    let m = scale_system(sys, delta)?.matrix(x)?;
    select_basis_in(&m, rank_tol)
}

pub(crate) fn select_basis_in(m: &DMatrix<f64>, rank_tol: f64) -> Result<BasisSelection> {
    let n0 = linalg::rank(m, rank_tol);
    if n0 == 0 {
        return Err(GeomError::ZeroColumns);
    }
    let mut best: Option<BasisSelection> = None;
    for cols in (0..m.ncols()).combinations(n0) {
        let (v, rows) = max_minor_in_columns(m, &cols);
        if best.as_ref().is_none_or(|b| v > b.minor_linf * (1.0 + 1e-12)) {
            best = Some(BasisSelection { n0, cols, rows, minor_linf: v });
        }
    }
    Ok(best.expect("at least one column subset"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub directions: usize,
    pub radii: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { directions: 16, radii: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartConfig {
    /// Fixed chart radius; chosen adaptively when `None`.
    pub eta: Option<f64>,
    pub integrator: IntegratorConfig,
    pub rank_tol: f64,
    pub grid: GridSpec,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig { eta: None, integrator: IntegratorConfig::default(), rank_tol: RANK_TOL, grid: GridSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvertOptions {
    /// Largest admissible `|u|`.
    pub radius: f64,
    /// Convergence tolerance on `|Phi(u) - y|`, relative to the chart scale.
    pub tol: f64,
    pub max_newton: usize,
    /// Tolerance on the off-leaf residual, relative to the chart scale.
    pub off_leaf_tol: f64,
}

impl InvertOptions {
    pub fn with_radius(radius: f64) -> Self {
        InvertOptions { radius, tol: 1e-9, max_newton: 60, off_leaf_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvertStatus {
    Inside,
    OutsideRadius,
    OffLeaf,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvertResult {
    pub status: InvertStatus,
    pub u: Vec<f64>,
    pub norm: f64,
    pub residual: f64,
    pub off_leaf: f64,
    pub iterations: usize,
}

impl InvertResult {
    pub fn inside(&self) -> bool {
        self.status == InvertStatus::Inside
    }
}

/// The forward map at `(x0, delta)` without a chosen radius.
#[derive(Debug, Clone)]
pub struct ChartMap<'a> {
    pub sys: &'a GradedSystem,
    pub x0: Vec<f64>,
    pub delta: Vec<f64>,
    pub basis: BasisSelection,
    pub cfg: IntegratorConfig,
    scaled: ScaledSystem<'a>,
    fs: FieldSet<'a>,
    /// `|dPhi(0)|`, the size of a unit step in `u`.
    pub scale: f64,
    /// `sqrt(det(dPhi(0)^T dPhi(0)))`.
    pub gram0: f64,
}

pub(crate) fn check_delta(delta: &[f64]) -> Result<()> {
    if delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(GeomError::InvalidArgument(format!("radius {delta:?} must lie in [0, 1] componentwise")));
    }
    Ok(())
}

impl<'a> ChartMap<'a> {
    pub fn new(sys: &'a GradedSystem, x0: &[f64], delta: &[f64], rank_tol: f64, cfg: IntegratorConfig) -> Result<ChartMap<'a>> {
        check_delta(delta)?;
        let scaled = scale_system(sys, delta)?;
        let m = scaled.matrix(x0)?;
        let basis = select_basis_in(&m, rank_tol)?;
        let fs = scaled.columns(&basis.cols);
        let d0 = linalg::select_columns(&m, &basis.cols);
        Ok(ChartMap {
            sys,
            x0: x0.to_vec(),
            delta: delta.to_vec(),
            scale: linalg::op_norm(&d0),
            gram0: linalg::gram_volume(&d0),
            basis,
            cfg,
            scaled,
            fs,
        })
    }

    pub fn n0(&self) -> usize {
        self.basis.n0
    }

    /// The scaled basis columns `(delta^d X)_J`.
    pub fn fields(&self) -> &FieldSet<'a> {
        &self.fs
    }

    pub fn scaled(&self) -> &ScaledSystem<'a> {
        &self.scaled
    }

    pub fn phi(&self, u: &[f64]) -> Result<FlowResult> {
        exp_map(&self.fs, u, &self.x0, &self.cfg)
    }

    pub fn jacobian(&self, u: &[f64]) -> Result<JacobianResult> {
        flow_jacobian(&self.fs, u, &self.x0, &self.cfg)
    }

    /// `n0 x q` matrix whose column `j` is `Y_j(u) = pinv(dPhi(u)) (delta^{d_j} X_j)(Phi(u))`.
    pub fn pullback(&self, u: &[f64]) -> Result<(DMatrix<f64>, JacobianResult)> {
        let jr = self.jacobian(u)?;
        let cols = self.scaled.all().matrix(&jr.endpoint);
        Ok((linalg::pinv(&jr.du, RANK_TOL) * cols, jr))
    }

    /// `A(u)` read off the pulled-back frame: `(Y_J)^T - I`.
    pub fn a_from_frame(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let (y, _) = self.pullback(u)?;
        let p = linalg::select_columns(&y, &self.basis.cols);
        Ok(p.transpose() - DMatrix::identity(self.n0(), self.n0()))
    }

    /// Largest pushforward residual `|dPhi Y_j - delta^{d_j} X_j(Phi)|` over `j`,
    /// and whether every `j` satisfies `res <= 1e-6 |X_j| + 1e-9`.
    pub fn pushforward_residual(&self, u: &[f64]) -> Result<(f64, bool)> {
        let (y, jr) = self.pullback(u)?;
        let cols = self.scaled.all().matrix(&jr.endpoint);
        let back = &jr.du * y;
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for j in 0..cols.ncols() {
            let c = cols.column(j).norm();
            let r = (back.column(j) - cols.column(j)).norm();
            worst = worst.max(if c > 0.0 { r / c } else { r });
            ok &= r <= 1e-6 * c + 1e-9;
        }
        Ok((worst, ok))
    }

    /// `C_u` at `p = Phi(u)`: `(C_u)_{i,k} = sum_j u_j c_{i,j}^k` with the
    /// coefficients of the scaled brackets in the scaled basis columns.
    /// Also returns the relative residual of that representation.
    pub fn c_matrix(&self, u: &[f64], p: &[f64]) -> (DMatrix<f64>, f64) {
        let n0 = self.n0();
        let cols = &self.basis.cols;
        let m = self.fs.matrix(p);
        let pinv = linalg::pinv(&m, RANK_TOL);
        let floor = 1e-14 * (1.0 + linalg::op_norm(&m).powi(2));
        let mut c = DMatrix::zeros(n0, n0);
        let mut worst: f64 = 0.0;
        for i in 0..n0 {
            for j in 0..n0 {
                if i == j || u[j] == 0.0 {
                    continue;
                }
                let s = self.fs.scale[i] * self.fs.scale[j];
                let b = DVector::from_vec(self.sys.bracket_at(cols[i], cols[j], p)) * s;
                let coef = &pinv * &b;
                worst = worst.max((&m * &coef - &b).norm() / (b.norm() + floor));
                for k in 0..n0 {
                    c[(i, k)] += u[j] * coef[k];
                }
            }
        }
        (c, worst)
    }

    /// Damped Gauss-Newton solve of `Phi(u) = y` from `u = 0`.
    pub fn invert(&self, y: &[f64], opts: &InvertOptions) -> Result<InvertResult> {
        let n0 = self.n0();
        let tol = opts.tol * self.scale;
        let mut u = vec![0.0; n0];
        let mut jr = self.jacobian(&u)?;
        let resid = |e: &[f64]| linalg::dist2(e, y);
        let mut rn = resid(&jr.endpoint);
        let mut converged = rn <= tol;
        let mut diverged = false;
        let mut it = 0;
        while !converged && it < opts.max_newton {
            it += 1;
            let r = DVector::from_iterator(y.len(), jr.endpoint.iter().zip(y).map(|(a, b)| a - b));
            let step = linalg::pinv(&jr.du, RANK_TOL) * r;
            if step.norm() <= 1e-15 * (1.0 + linalg::norm2(&u)) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                if linalg::norm2(&cand) > 4.0 * opts.radius + 1.0 || cand.iter().any(|v| !v.is_finite()) {
                    t *= 0.5;
                    continue;
                }
                let c = self.jacobian(&cand)?;
                if !c.left_domain {
                    let cr = resid(&c.endpoint);
                    if cr < rn {
                        accepted = Some((cand, c, cr));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((cand, c, cr)) => {
                    let moved = t * step.norm();
                    u = cand;
                    jr = c;
                    rn = cr;
                    converged = rn <= tol;
                    if !converged && moved <= 1e-14 * (1.0 + linalg::norm2(&u)) {
                        break;
                    }
                }
                None => {
                    diverged = linalg::norm2(&u) > 2.0 * opts.radius;
                    break;
                }
            }
        }
        let r = DVector::from_iterator(y.len(), y.iter().zip(&jr.endpoint).map(|(a, b)| a - b));
        let proj = &jr.du * (linalg::pinv(&jr.du, RANK_TOL) * &r);
        let off_leaf = (&r - proj).norm();
        let norm = linalg::norm2(&u);
        let status = if off_leaf > opts.off_leaf_tol * self.scale {
            InvertStatus::OffLeaf
        } else if diverged || !converged {
            InvertStatus::Diverged
        } else if norm >= opts.radius {
            InvertStatus::OutsideRadius
        } else {
            InvertStatus::Inside
        };
        Ok(InvertResult { status, u, norm, residual: rn, off_leaf, iterations: it })
    }
}

/// Per-node data on the radial grid.
#[derive(Debug, Clone)]
struct Node {
    dphi: DMatrix<f64>,
    c: DMatrix<f64>,
    residual: f64,
    left: bool,
}

#[derive(Debug, Clone)]
struct NodeGrid {
    spec: GridSpec,
    eta: f64,
    directions: Vec<Vec<f64>>,
    radii: Vec<f64>,
    /// Indexed `d * radii.len() + m`.
    nodes: Vec<Node>,
}

impl NodeGrid {
    fn evaluate(map: &ChartMap, eta: f64, spec: GridSpec) -> Result<NodeGrid> {
        let directions = sphere_directions(map.n0(), spec.directions);
        let radii: Vec<f64> = (1..=spec.radii).map(|m| eta * m as f64 / spec.radii as f64).collect();
        let nr = radii.len();
        let nodes = (0..directions.len() * nr)
            .into_par_iter()
            .map(|k| {
                let u: Vec<f64> = directions[k / nr].iter().map(|w| w * radii[k % nr]).collect();
                let jr = map.jacobian(&u)?;
                let (c, residual) = if jr.left_domain {
                    (DMatrix::zeros(map.n0(), map.n0()), 0.0)
                } else {
                    map.c_matrix(&u, &jr.endpoint)
                };
                Ok(Node { dphi: jr.du, c, residual, left: jr.left_domain })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NodeGrid { spec, eta, directions, radii, nodes })
    }

    fn node(&self, d: usize, m: usize) -> &Node {
        &self.nodes[d * self.radii.len() + m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaTrial {
    pub eta: f64,
    /// `sup |C_u| / |u|` over the grid.
    pub d_const: f64,
    /// `kappa^2 + D eta (kappa + 1) / 2`.
    pub contraction_lhs: f64,
    pub det_ratio_min: f64,
    pub det_ratio_max: f64,
    pub left_domain: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartDiagnostics {
    pub n0: usize,
    pub cols: Vec<usize>,
    pub eta: f64,
    pub kappa: f64,
    pub user_eta: bool,
    pub d_const: f64,
    pub contraction_lhs: f64,
    pub det_window: (f64, f64),
    pub det_ratio_min: f64,
    pub det_ratio_max: f64,
    pub structure_residual: f64,
    pub eta_trace: Vec<EtaTrial>,
}

/// A scaling chart with its radius and grid data.
#[derive(Debug, Clone)]
pub struct Chart<'a> {
    pub map: ChartMap<'a>,
    pub eta: f64,
    pub diagnostics: ChartDiagnostics,
    grid: NodeGrid,
}

pub fn det_window(n0: usize) -> (f64, f64) {
    ((1.0 - KAPPA).powi(n0 as i32), (1.0 + KAPPA).powi(n0 as i32))
}

fn trial(map: &ChartMap, grid: &NodeGrid) -> EtaTrial {
    let n0 = map.n0();
    let mut d_const: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut left = false;
    for (d, _) in grid.directions.iter().enumerate() {
        for (m, r) in grid.radii.iter().enumerate() {
            let node = grid.node(d, m);
            left |= node.left;
            d_const = d_const.max(linalg::op_norm(&node.c) / r);
            let ratio = linalg::gram_volume(&node.dphi) / map.gram0;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    let lhs = KAPPA * KAPPA + d_const * grid.eta * (KAPPA + 1.0) / 2.0;
    let (wlo, whi) = det_window(n0);
    let accepted = !left && lhs <= KAPPA && lo >= wlo && hi <= whi;
    EtaTrial { eta: grid.eta, d_const, contraction_lhs: lhs, det_ratio_min: lo, det_ratio_max: hi, left_domain: left, accepted }
}

const MIN_ETA: f64 = 1e-6;

/// Builds the chart at `(x, delta)`, choosing `eta` by halving from 1/2 unless fixed in `cfg`.
pub fn build_chart<'a>(sys: &'a GradedSystem, x: &[f64], delta: &[f64], cfg: &ChartConfig) -> Result<Chart<'a>> {
    let map = ChartMap::new(sys, x, delta, cfg.rank_tol, cfg.integrator)?;
    let n0 = map.n0();
    let mut trace = Vec::new();
    let (grid, t) = match cfg.eta {
        Some(eta) => {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(GeomError::InvalidArgument(format!("chart radius {eta} must be positive")));
            }
            let grid = NodeGrid::evaluate(&map, eta, cfg.grid)?;
            let t = trial(&map, &grid);
            trace.push(t.clone());
            let floor = det_window(n0).0 / 4.0;
            if t.det_ratio_min < floor {
                return Err(GeomError::ChartRadiusTooLarge { ratio: t.det_ratio_min, floor });
            }
            if t.left_domain {
                return Err(GeomError::LeftDomain);
            }
            (grid, t)
        }
        None => {
            let mut eta = 0.5;
            loop {
                let grid = NodeGrid::evaluate(&map, eta, cfg.grid)?;
                let t = trial(&map, &grid);
                trace.push(t.clone());
                if t.accepted {
                    break (grid, t);
                }
                eta *= 0.5;
                if eta < MIN_ETA {
                    return Err(GeomError::NoAdmissibleRadius(eta));
                }
            }
        }
    };
    let structure_residual = grid.nodes.iter().map(|n| n.residual).fold(0.0, f64::max);
    let diagnostics = ChartDiagnostics {
        n0,
        cols: map.basis.cols.clone(),
        eta: t.eta,
        kappa: KAPPA,
        user_eta: cfg.eta.is_some(),
        d_const: t.d_const,
        contraction_lhs: t.contraction_lhs,
        det_window: det_window(n0),
        det_ratio_min: t.det_ratio_min,
        det_ratio_max: t.det_ratio_max,
        structure_residual,
        eta_trace: trace,
    };
    Ok(Chart { eta: t.eta, map, diagnostics, grid })
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureSolution {
    pub grid: GridSpec,
    pub eta: f64,
    pub kappa: f64,
    pub iterations: usize,
    /// `sup |T A - A|` at the returned `A`.
    pub residual: f64,
    /// `sup |A_{k} - A_{k-1}|` per iteration.
    pub updates: Vec<f64>,
    /// Ratios of successive updates.
    pub ratios: Vec<f64>,
    /// `sup |A|` over the grid.
    pub max_norm: f64,
    /// `sup |A(r w)| / r`.
    pub slope: f64,
    #[serde(skip)]
    pub directions: Vec<Vec<f64>>,
    #[serde(skip)]
    pub radii: Vec<f64>,
    /// `A` at node `(d, m)`, indexed `d * radii.len() + m`.
    #[serde(skip)]
    pub a: Vec<DMatrix<f64>>,
}

impl StructureSolution {
    pub fn at(&self, d: usize, m: usize) -> &DMatrix<f64> {
        &self.a[d * self.radii.len() + m]
    }

    pub fn node_u(&self, d: usize, m: usize) -> Vec<f64> {
        self.directions[d].iter().map(|w| w * self.radii[m]).collect()
    }
}

/// One application of `T A (r w) = (1/r) int_0^r g(s w) ds`,
/// `g = -A^2 - C A - C`, by the trapezoid rule with `A(0) = C(0) = 0`.
fn apply_t(grid: &NodeGrid, a: &[DMatrix<f64>], n0: usize) -> Vec<DMatrix<f64>> {
    let nr = grid.radii.len();
    let mut out = Vec::with_capacity(a.len());
    for d in 0..grid.directions.len() {
        let mut integral = DMatrix::zeros(n0, n0);
        let mut g_prev = DMatrix::zeros(n0, n0);
        let mut r_prev = 0.0;
        for m in 0..nr {
            let c = &grid.node(d, m).c;
            let am = &a[d * nr + m];
            let g = -(am * am) - c * am - c;
            let r = grid.radii[m];
            integral += (&g + &g_prev) * (0.5 * (r - r_prev));
            out.push(&integral / r);
            g_prev = g;
            r_prev = r;
        }
    }
    out
}

fn sup_diff(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| linalg::op_norm(&(x - y))).fold(0.0, f64::max)
}

/// Picard iteration for the structure equation on the chart's radial grid.
///
/// Stops when the sup-norm update drops below `tol`. Fails when five
/// successive update ratios exceed 0.95 or after `max_iter` iterations.
pub fn solve_structure_ode(chart: &Chart, grid: GridSpec, tol: f64, max_iter: usize) -> Result<StructureSolution> {
    let owned;
    let g = if grid == chart.grid.spec {
        &chart.grid
    } else {
        owned = NodeGrid::evaluate(&chart.map, chart.eta, grid)?;
        &owned
    };
    if g.nodes.iter().any(|n| n.left) {
        return Err(GeomError::LeftDomain);
    }
    let n0 = chart.map.n0();
    let mut a = vec![DMatrix::zeros(n0, n0); g.nodes.len()];
    let mut updates = Vec::new();
    let mut ratios = Vec::new();
    let mut slow = 0;
    loop {
        let next = apply_t(g, &a, n0);
        let upd = sup_diff(&next, &a);
        a = next;
        if let Some(&prev) = updates.last() {
            let ratio = if prev > 0.0 { upd / prev } else { 0.0 };
            ratios.push(ratio);
            slow = if ratio > 0.95 { slow + 1 } else { 0 };
            if slow >= 5 {
                return Err(GeomError::NonContraction(ratio));
            }
        }
        updates.push(upd);
        if upd < tol {
            break;
        }
        if updates.len() >= max_iter {
            return Err(GeomError::MaxIterations(max_iter));
        }
    }
    let residual = sup_diff(&apply_t(g, &a, n0), &a);
    let nr = g.radii.len();
    let mut max_norm: f64 = 0.0;
    let mut slope: f64 = 0.0;
    for (k, m) in a.iter().enumerate() {
        let v = linalg::op_norm(m);
        max_norm = max_norm.max(v);
        slope = slope.max(v / g.radii[k % nr]);
    }
    Ok(StructureSolution {
        grid: g.spec,
        eta: chart.eta,
        kappa: KAPPA,
        iterations: updates.len(),
        residual,
        updates,
        ratios,
        max_norm,
        slope,
        directions: g.directions.clone(),
        radii: g.radii.clone(),
        a,
    })
}

/// Largest `|A_ode - A_frame|` over the grid nodes of `sol`.
pub fn compare_with_frame(chart: &Chart, sol: &StructureSolution) -> Result<f64> {
    let nr = sol.radii.len();
    (0..sol.a.len())
        .into_par_iter()
        .map(|k| {
            let u = sol.node_u(k / nr, k % nr);
            let af = chart.map.a_from_frame(&u)?;
            Ok(linalg::op_norm(&(af - &sol.a[k])))
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

/// Uniform sample from the ball of radius `r` in `R^n`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = linalg::norm2(&v);
        if norm > 1e-12 {
            let s = r * rng.random::<f64>().powf(1.0 / n as f64) / norm;
            return v.into_iter().map(|x| x * s).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub samples: usize,
    pub seed: u64,
    pub det_window: (f64, f64),
    pub det_ratio_min: f64,
    pub det_ratio_max: f64,
    pub det_within_window: bool,
    /// Largest relative pushforward residual over samples in `B(eta / 1.1)`.
    pub pushforward_max: f64,
    pub pushforward_ok: bool,
    pub injectivity_pairs: usize,
    pub collisions: usize,
}

/// Samples the chart: determinant ratios, the pushforward identity and
/// pairwise injectivity at mesh resolution.
pub fn verify_chart(chart: &Chart, samples: usize, seed: u64) -> Result<VerifyReport> {
    let n0 = chart.map.n0();
    let eta = chart.eta;
    let rows = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let u = sample_ball(&mut rng, n0, eta);
            let jr = chart.map.jacobian(&u)?;
            let ratio = linalg::gram_volume(&jr.du) / chart.map.gram0;
            let inner: Vec<f64> = u.iter().map(|v| v / 1.1).collect();
            let (pf, ok) = chart.map.pushforward_residual(&inner)?;
            Ok((u, jr.endpoint, ratio, pf, ok))
        })
        .collect::<Result<Vec<_>>>()?;
    let window = det_window(n0);
    let lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let d0 = chart.map.fields().matrix(&chart.map.x0);
    let sigma_min = linalg::singular_values(&d0).get(n0 - 1).copied().unwrap_or(0.0);
    let mut pairs = 0;
    let mut collisions = 0;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            pairs += 1;
            let du = linalg::dist2(&rows[i].0, &rows[j].0);
            if du > 0.0 && linalg::dist2(&rows[i].1, &rows[j].1) < 1e-3 * sigma_min * du {
                collisions += 1;
            }
        }
    }
    Ok(VerifyReport {
        samples,
        seed,
        det_window: window,
        det_ratio_min: lo,
        det_ratio_max: hi,
        det_within_window: lo >= window.0 && hi <= window.1,
        pushforward_max: rows.iter().map(|r| r.3).fold(0.0, f64::max),
        pushforward_ok: rows.iter().all(|r| r.4),
        injectivity_pairs: pairs,
        collisions,
    })
}

/// `psi(Phi^{-1}(y))` with `psi` a C^2 radial profile equal to 1 on
/// `|u| <= rho eta` and 0 for `|u| >= eta`.
#[derive(Debug, Clone)]
pub struct Bump<'c, 'a> {
    pub chart: &'c Chart<'a>,
    pub rho: f64,
}

pub fn bump_function<'c, 'a>(chart: &'c Chart<'a>, rho: f64) -> Result<Bump<'c, 'a>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(GeomError::InvalidArgument(format!("inner fraction {rho} must lie in (0, 1)")));
    }
    Ok(Bump { chart, rho })
}

impl Bump<'_, '_> {
    /// The profile as a function of `s = |u| / eta`.
    pub fn profile(&self, s: f64) -> f64 {
        if s <= self.rho {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            let t = (s - self.rho) / (1.0 - self.rho);
            1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self.chart.map.invert(y, &InvertOptions::with_radius(self.chart.eta)) {
            Ok(r) if r.inside() => self.profile(r.norm / self.chart.eta),
            _ => 0.0,
        }
    }

    /// `sup |(delta^{d_j} X_j) phi|` for every field `j`, by central
    /// differences along the flows at `samples` points of the chart image.
    pub fn derivative_bounds(&self, samples: usize, seed: u64) -> Result<Vec<f64>> {
        let map = &self.chart.map;
        let q = map.sys.q();
        let h = 1e-3 * self.chart.eta;
        let per_sample = (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = task_rng(seed, i as u64);
                let u = sample_ball(&mut rng, map.n0(), self.chart.eta);
                let y = map.phi(&u)?.endpoint;
                (0..q)
                    .map(|j| {
                        let fs = map.scaled().columns(&[j]);
                        let a = exp_map(&fs, &[h], &y, &map.cfg)?.endpoint;
                        let b = exp_map(&fs, &[-h], &y, &map.cfg)?.endpoint;
                        Ok(((self.eval(&a) - self.eval(&b)) / (2.0 * h)).abs())
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..q).map(|j| per_sample.iter().map(|v| v[j]).fold(0.0, f64::max)).collect())
    }
}
