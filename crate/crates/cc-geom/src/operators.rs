//! Averaging operators over balls, their compositions across parameter
//! families, kernel estimates, maximal functions, intersection volumes and
//! metric composition.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::balls::{cc_distance, DistanceReport, RHO_OUT};
use crate::chart::{build_chart, check_delta, sample_ball, ChartConfig, ChartMap, InvertOptions};
use crate::error::{GeomError, Result};
use crate::flows::{composed_exp, flow_jacobian_with, IntegratorConfig, JacobianMethod};
use crate::linalg::{self, RANK_TOL};
use crate::quadrature::{ball_nodes, default_direction_count, gauss_legendre, sphere_directions, unit_ball_volume};
use crate::rng::task_rng;
use crate::scaling::{scale_system, FieldSet};
use crate::system::GradedSystem;

/// Smallest Monte Carlo budget accepted.
pub const MIN_BUDGET: usize = 1000;
/// Fraction of domain exits above which a Monte Carlo result is flagged.
pub const EXIT_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// `Phi(B(r))` with the Euclidean ball in `u`.
    Ball,
    /// `Phi([-r, r]^{n0})`.
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AvgQuadrature {
    /// Polar Gauss-Legendre for balls, tensor Gauss-Legendre with `radial`
    /// nodes per axis for cubes.
    Grid { directions: Option<usize>, radial: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageSpec {
    pub shape: Shape,
    /// Radius in `u`; the adaptive chart radius `eta` when `None`.
    pub radius: Option<f64>,
    pub quadrature: AvgQuadrature,
    pub chart: ChartConfig,
}

impl Default for AverageSpec {
    fn default() -> Self {
        AverageSpec { shape: Shape::Ball, radius: None, quadrature: AvgQuadrature::Grid { directions: None, radial: 8 }, chart: ChartConfig::default() }
    }
}

impl AverageSpec {
    pub fn cube(radius: f64, radial: usize) -> Self {
        AverageSpec { shape: Shape::Cube, radius: Some(radius), quadrature: AvgQuadrature::Grid { directions: None, radial }, ..Default::default() }
    }

    fn integrator(&self) -> &IntegratorConfig {
        &self.chart.integrator
    }
}

/// Quadrature nodes on the image of a chart: points and weights
/// `w(u) |minorVector(dPhi(u))|_2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub n0: usize,
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Sum of the weights, the volume of the shape's image.
    pub volume: f64,
    pub monte_carlo: bool,
}

impl Rule {
    pub fn average<F: Fn(&[f64]) -> f64 + ?Sized>(&self, f: &F) -> f64 {
        self.average_with_stderr(f).0
    }

    /// Weighted mean and, for Monte Carlo rules, the standard error of the
    /// ratio estimator.
    pub fn average_with_stderr<F: Fn(&[f64]) -> f64 + ?Sized>(&self, f: &F) -> (f64, f64) {
        let vals: Vec<f64> = self.points.iter().map(|p| f(p)).collect();
        let mean = vals.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>() / self.volume;
        if !self.monte_carlo {
            return (mean, 0.0);
        }
        let var = vals.iter().zip(&self.weights).map(|(v, w)| (w * (v - mean)).powi(2)).sum::<f64>();
        (mean, var.sqrt() / self.volume)
    }
}

fn cube_nodes(n: usize, r: f64, per_axis: usize) -> Vec<(Vec<f64>, f64)> {
    let (x, w) = gauss_legendre(per_axis, -r, r);
    (0..n)
        .map(|_| 0..per_axis)
        .multi_cartesian_product()
        .map(|idx| (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| w[i]).product()))
        .collect()
}

fn shape_volume(shape: Shape, n: usize, r: f64) -> f64 {
    match shape {
        Shape::Ball => unit_ball_volume(n) * r.powi(n as i32),
        Shape::Cube => (2.0 * r).powi(n as i32),
    }
}

fn sample_shape<R: Rng + ?Sized>(rng: &mut R, shape: Shape, n: usize, r: f64) -> Vec<f64> {
    match shape {
        Shape::Ball => sample_ball(rng, n, r),
        Shape::Cube => (0..n).map(|_| rng.random_range(-r..r)).collect(),
    }
}

fn shape_norm(shape: Shape, u: &[f64]) -> f64 {
    match shape {
        Shape::Ball => linalg::norm2(u),
        Shape::Cube => u.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Domain nodes `(u, w)` for the shape, before the Jacobian weight.
fn domain_nodes(spec: &AverageSpec, n0: usize, r: f64) -> Result<(Vec<(Vec<f64>, f64)>, bool)> {
    match spec.quadrature {
        AvgQuadrature::Grid { directions, radial } => {
            if radial == 0 {
                return Err(GeomError::InvalidArgument("quadrature needs at least one node per axis".into()));
            }
            let nodes = match spec.shape {
                Shape::Ball => {
                    let dirs = sphere_directions(n0, directions.unwrap_or_else(|| default_direction_count(n0)));
                    ball_nodes(n0, r, &dirs, radial)
                }
                Shape::Cube => cube_nodes(n0, r, radial),
            };
            Ok((nodes, false))
        }
        AvgQuadrature::MonteCarlo { samples, seed } => {
            if samples < MIN_BUDGET {
                return Err(GeomError::InvalidArgument(format!("Monte Carlo budget {samples} is below {MIN_BUDGET}")));
            }
            let w = shape_volume(spec.shape, n0, r) / samples as f64;
            let nodes = (0..samples)
                .map(|i| {
                    let mut rng = task_rng(seed, i as u64);
                    (sample_shape(&mut rng, spec.shape, n0, r), w)
                })
                .collect();
            Ok((nodes, true))
        }
    }
}

fn rule_on_map(map: &ChartMap, r: f64, spec: &AverageSpec) -> Result<Rule> {
    let (nodes, mc) = domain_nodes(spec, map.n0(), r)?;
    let pw = nodes
        .par_iter()
        .map(|(u, w)| {
            let jr = map.jacobian(u)?;
            if jr.left_domain {
                return Err(GeomError::LeftDomain);
            }
            Ok((jr.endpoint, w * linalg::gram_volume(&jr.du)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (points, weights): (Vec<_>, Vec<_>) = pw.into_iter().unzip();
    Ok(Rule {
        x: map.x0.clone(),
        delta: map.delta.clone(),
        n0: map.n0(),
        radius: r,
        volume: weights.iter().sum(),
        points,
        weights,
        monte_carlo: mc,
    })
}

/// Quadrature rule for averages over the ball `(x, delta)`.
pub fn ball_rule(sys: &GradedSystem, x: &[f64], delta: &[f64], spec: &AverageSpec) -> Result<Rule> {
    match spec.radius.or(spec.chart.eta) {
        Some(r) => {
            if !(r > 0.0) {
                return Err(GeomError::InvalidArgument(format!("radius {r} must be positive")));
            }
            let map = ChartMap::new(sys, x, delta, spec.chart.rank_tol, spec.integrator().clone())?;
            rule_on_map(&map, r, spec)
        }
        None => {
            let chart = build_chart(sys, x, delta, &spec.chart)?;
            rule_on_map(&chart.map, chart.eta, spec)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Average {
    pub value: f64,
    pub stderr: f64,
    pub volume: f64,
    pub radius: f64,
    pub n0: usize,
    pub nodes: usize,
    pub quadrature: AvgQuadrature,
}

/// `(1/Vol) int f` over the image of the chart shape at `(x, delta)`.
pub fn average<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, sys: &GradedSystem, x: &[f64], delta: &[f64], spec: &AverageSpec) -> Result<Average> {
    let rule = ball_rule(sys, x, delta, spec)?;
    let (value, stderr) = rule.average_with_stderr(f);
    Ok(Average { value, stderr, volume: rule.volume, radius: rule.radius, n0: rule.n0, nodes: rule.points.len(), quadrature: spec.quadrature })
}

fn check_families(sys: &GradedSystem, families: &[Vec<usize>], x: &[f64], rank_tol: f64) -> Result<()> {
    if families.is_empty() || families.iter().any(|f| f.is_empty()) {
        return Err(GeomError::InvalidArgument("families must be nonempty lists of fields".into()));
    }
    if let Some(j) = families.iter().flatten().find(|&&j| j >= sys.q()) {
        return Err(GeomError::InvalidArgument(format!("field index {j} out of range")));
    }
    let all = FieldSet::unscaled(sys).matrix(x);
    let union: Vec<usize> = families.iter().flatten().copied().unique().collect();
    let sub = linalg::select_columns(&all, &union);
    if linalg::rank(&sub, rank_tol) < linalg::rank(&all, rank_tol) {
        return Err(GeomError::InvalidArgument("the families do not contain a spanning set of the system".into()));
    }
    Ok(())
}

/// Endpoints `e^{u_1.Z^1} ... e^{u_nu.Z^nu} x` with each block uniform in
/// the cube of half-width `1/sqrt(q_mu)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposeSamples {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub budget: usize,
    pub seed: u64,
    pub endpoints: Vec<Vec<f64>>,
    pub exits: usize,
    /// More than 1% of the flows left the domain.
    pub flagged: bool,
}

impl ComposeSamples {
    pub fn average<F: Fn(&[f64]) -> f64 + ?Sized>(&self, f: &F) -> (f64, f64) {
        let n = self.endpoints.len() as f64;
        let vals: Vec<f64> = self.endpoints.iter().map(|p| f(p)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }
}

pub fn compose_samples(
    sys: &GradedSystem,
    families: &[Vec<usize>],
    delta: &[f64],
    x: &[f64],
    budget: usize,
    seed: u64,
    cfg: &ChartConfig,
) -> Result<ComposeSamples> {
    if budget < MIN_BUDGET {
        return Err(GeomError::InvalidArgument(format!("Monte Carlo budget {budget} is below {MIN_BUDGET}")));
    }
    check_delta(delta)?;
    if delta.len() != sys.nu() {
        return Err(GeomError::InvalidArgument(format!("radius needs {} components", sys.nu())));
    }
    check_families(sys, families, x, cfg.rank_tol)?;
    let scaled = scale_system(sys, delta)?;
    let sets: Vec<FieldSet> = families.iter().map(|f| scaled.columns(f)).collect();
    let runs = (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let blocks: Vec<Vec<f64>> = sets
                .iter()
                .map(|fs| {
                    let h = 1.0 / (fs.len() as f64).sqrt();
                    (0..fs.len()).map(|_| rng.random_range(-h..h)).collect()
                })
                .collect();
            composed_exp(&sets, &blocks, x, &cfg.integrator)
        })
        .collect::<Result<Vec<_>>>()?;
    let exits = runs.iter().filter(|r| r.left_domain).count();
    let endpoints: Vec<Vec<f64>> = runs.into_iter().filter(|r| !r.left_domain).map(|r| r.endpoint).collect();
    if endpoints.is_empty() {
        return Err(GeomError::LeftDomain);
    }
    Ok(ComposeSamples {
        x: x.to_vec(),
        delta: delta.to_vec(),
        budget,
        seed,
        endpoints,
        exits,
        flagged: exits as f64 > EXIT_FLAG_FRACTION * budget as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposeResult {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub exits: usize,
    pub flagged: bool,
    pub budget: usize,
    pub seed: u64,
}

/// Monte Carlo value of `A_{Z^1} ... A_{Z^nu} f(x)`.
#[allow(clippy::too_many_arguments)]
pub fn compose_averages<F: Fn(&[f64]) -> f64 + ?Sized>(
    f: &F,
    sys: &GradedSystem,
    families: &[Vec<usize>],
    delta: &[f64],
    x: &[f64],
    budget: usize,
    seed: u64,
    cfg: &ChartConfig,
) -> Result<ComposeResult> {
    let s = compose_samples(sys, families, delta, x, budget, seed, cfg)?;
    let (value, stderr) = s.average(f);
    Ok(ComposeResult { value, stderr, samples: s.endpoints.len(), exits: s.exits, flagged: s.flagged, budget, seed })
}

/// Two-sided fit of composed averages against joint-ball averages:
/// `c_lower = min compose / A_{B(x, lambda delta)}`, `c_upper = max compose / A_{B(x, delta)}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub delta: Vec<f64>,
    pub inner_factor: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub centers: usize,
    pub functions: usize,
    pub budget: usize,
    pub seed: u64,
    pub flagged: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn sandwich_fit(
    fs: &[&(dyn Fn(&[f64]) -> f64 + Sync)],
    sys: &GradedSystem,
    families: &[Vec<usize>],
    xs: &[Vec<f64>],
    delta: &[f64],
    inner_factor: f64,
    budget: usize,
    seed: u64,
    spec: &AverageSpec,
) -> Result<SandwichReport> {
    if !(inner_factor > 0.0 && inner_factor <= 1.0) {
        return Err(GeomError::InvalidArgument("inner factor must lie in (0, 1]".into()));
    }
    let inner_delta: Vec<f64> = delta.iter().map(|d| d * inner_factor).collect();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut flagged = 0;
    for (i, x) in xs.iter().enumerate() {
        let comp = compose_samples(sys, families, delta, x, budget, task_rng(seed, i as u64).random(), &spec.chart)?;
        flagged += comp.flagged as usize;
        let inner = ball_rule(sys, x, &inner_delta, spec)?;
        let outer = ball_rule(sys, x, delta, spec)?;
        for f in fs {
            let c = comp.average(*f).0;
            lo = lo.min(c / inner.average(*f));
            hi = hi.max(c / outer.average(*f));
        }
    }
    Ok(SandwichReport {
        delta: delta.to_vec(),
        inner_factor,
        c_lower: lo,
        c_upper: hi,
        centers: xs.len(),
        functions: fs.len(),
        budget,
        seed,
        flagged,
    })
}

/// Push-forward density of the composed map, binned in joint-chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub n0: usize,
    pub bins: usize,
    /// Bins cover `[-range, range]^{n0}`.
    pub range: f64,
    /// Normalized masses, row-major with the first coordinate slowest.
    pub histogram: Vec<f64>,
    pub mass: f64,
    /// Endpoints the joint chart could not place.
    pub unplaced: usize,
    pub gram0: f64,
    pub diagonal: f64,
    /// Volume of the joint cube ball `Phi([-1, 1]^{n0})`.
    pub joint_volume: f64,
    pub diagonal_times_volume: f64,
    /// Largest `|u|` over placed endpoints.
    pub support_radius: f64,
    /// Fraction of endpoints that are not OUT of the ball at `nu delta`.
    pub support_fraction: f64,
    pub samples: usize,
    pub exits: usize,
    pub flagged: bool,
    pub budget: usize,
    pub seed: u64,
}

impl KernelEstimate {
    /// `(bin center, mass)` for every bin.
    pub fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        let w = 2.0 * self.range / self.bins as f64;
        (0..self.n0)
            .map(|_| 0..self.bins)
            .multi_cartesian_product()
            .zip(&self.histogram)
            .map(|(idx, m)| (idx.iter().map(|&i| -self.range + (i as f64 + 0.5) * w).collect(), *m))
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kernel_estimate(
    sys: &GradedSystem,
    families: &[Vec<usize>],
    delta: &[f64],
    x: &[f64],
    bins: usize,
    budget: usize,
    seed: u64,
    spec: &AverageSpec,
) -> Result<KernelEstimate> {
    if bins == 0 || bins % 2 == 0 {
        return Err(GeomError::InvalidArgument(format!("bin count {bins} must be odd")));
    }
    let nu = families.len() as f64;
    let wide: Vec<f64> = delta.iter().map(|d| d * nu).collect();
    check_delta(&wide)?;
    let samples = compose_samples(sys, families, delta, x, budget, seed, &spec.chart)?;
    let cfg = &spec.chart;
    let map = ChartMap::new(sys, x, delta, cfg.rank_tol, cfg.integrator.clone())?;
    let outer = ChartMap::new(sys, x, &wide, cfg.rank_tol, cfg.integrator.clone())?;
    let n0 = map.n0();
    let far = InvertOptions::with_radius(4.0 * nu * (n0 as f64).sqrt());
    let near = InvertOptions::with_radius(RHO_OUT);
    let placed = samples
        .endpoints
        .par_iter()
        .map(|z| {
            let u = map.invert(z, &far)?;
            let inside = outer.invert(z, &near)?.inside();
            Ok((u.inside().then_some(u.u), inside))
        })
        .collect::<Result<Vec<_>>>()?;
    let us: Vec<&Vec<f64>> = placed.iter().filter_map(|(u, _)| u.as_ref()).collect();
    if us.is_empty() {
        return Err(GeomError::DegenerateMinor);
    }
    let range = us.iter().map(|u| shape_norm(Shape::Cube, u)).fold(0.0, f64::max).max(1e-300) * (1.0 + 1e-9);
    let width = 2.0 * range / bins as f64;
    let mut counts = vec![0u64; bins.pow(n0 as u32)];
    for u in &us {
        let idx = u.iter().fold(0usize, |acc, v| {
            let k = (((v + range) / width).floor() as usize).min(bins - 1);
            acc * bins + k
        });
        counts[idx] += 1;
    }
    let total = us.len() as f64;
    let histogram: Vec<f64> = counts.iter().map(|c| *c as f64 / total).collect();
    let center = (0..n0).fold(0usize, |acc, _| acc * bins + bins / 2);
    let diagonal = histogram[center] / width.powi(n0 as i32) / map.gram0;
    let joint = ball_rule(sys, x, delta, &AverageSpec { shape: Shape::Cube, radius: Some(1.0), quadrature: AvgQuadrature::Grid { directions: None, radial: 8 }, chart: cfg.clone() })?;
    let inside = placed.iter().filter(|(_, ok)| *ok).count();
    Ok(KernelEstimate {
        x: x.to_vec(),
        delta: delta.to_vec(),
        n0,
        bins,
        range,
        mass: histogram.iter().sum(),
        histogram,
        unplaced: placed.len() - us.len(),
        gram0: map.gram0,
        diagonal,
        joint_volume: joint.volume,
        diagonal_times_volume: diagonal * joint.volume,
        support_radius: us.iter().map(|u| linalg::norm2(u)).fold(0.0, f64::max),
        support_fraction: inside as f64 / placed.len() as f64,
        samples: samples.endpoints.len(),
        exits: samples.exits,
        flagged: samples.flagged,
        budget,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub point: usize,
    pub delta: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalGrid {
    pub xs: Vec<Vec<f64>>,
    pub deltas: Vec<Vec<f64>>,
    /// `max_delta A_delta |f|(x)`; `None` when every radius failed.
    pub values: Vec<Option<f64>>,
    /// Index of the maximizing radius.
    pub argmax: Vec<Option<usize>>,
    pub skipped: Vec<Skipped>,
}

/// Pointwise maximum of `A_{B(x, delta)} |f|` over the radius set.
pub fn maximal_function<F: Fn(&[f64]) -> f64 + Sync + ?Sized>(
    f: &F,
    sys: &GradedSystem,
    xs: &[Vec<f64>],
    deltas: &[Vec<f64>],
    spec: &AverageSpec,
) -> Result<MaximalGrid> {
    if deltas.is_empty() {
        return Err(GeomError::InvalidArgument("the radius set is empty".into()));
    }
    let abs = |p: &[f64]| f(p).abs();
    let per_point: Vec<Vec<std::result::Result<f64, String>>> = xs
        .par_iter()
        .map(|x| deltas.iter().map(|d| ball_rule(sys, x, d, spec).map(|r| r.average(&abs)).map_err(|e| e.to_string())).collect())
        .collect();
    let mut values = Vec::new();
    let mut argmax = Vec::new();
    let mut skipped = Vec::new();
    for (i, row) in per_point.into_iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (k, v) in row.into_iter().enumerate() {
            match v {
                Ok(v) if best.is_none_or(|(_, b)| v > b) => best = Some((k, v)),
                Ok(_) => {}
                Err(reason) => skipped.push(Skipped { point: i, delta: k, reason }),
            }
        }
        values.push(best.map(|b| b.1));
        argmax.push(best.map(|b| b.0));
    }
    Ok(MaximalGrid { xs: xs.to_vec(), deltas: deltas.to_vec(), values, argmax, skipped })
}

/// `(sum |g|^p / sum |f|^p)^{1/p}` over a common grid, an empirical
/// surrogate for an `L^p` operator norm.
pub fn grid_lp_ratio(f: &[f64], g: &[f64], p: f64) -> f64 {
    let s = |v: &[f64]| v.iter().map(|a| a.abs().powf(p)).sum::<f64>();
    (s(g) / s(f)).powf(1.0 / p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductPoint {
    pub x: Vec<f64>,
    pub joint: f64,
    pub product: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductBoundReport {
    pub points: Vec<ProductPoint>,
    /// `max_x M f(x) / (M_nu ... M_1 f)(x)`.
    pub c_fit: f64,
    /// Every ratio is finite.
    pub holds: bool,
}

fn family_delta(nu: usize, mu: usize, s: f64) -> Vec<f64> {
    let mut d = vec![1.0; nu];
    d[mu] = s;
    d
}

/// `(M_k ... M_1 |f|)(p)` with family `mu` scaled through parameter `mu`.
fn nested_max<F: Fn(&[f64]) -> f64 + Sync + ?Sized>(
    f: &F,
    subs: &[GradedSystem],
    scales: &[Vec<f64>],
    k: usize,
    p: &[f64],
    spec: &AverageSpec,
) -> Result<f64> {
    if k == 0 {
        return Ok(f(p).abs());
    }
    let sub = &subs[k - 1];
    let mut best: f64 = 0.0;
    for &s in &scales[k - 1] {
        let rule = ball_rule(sub, p, &family_delta(sub.nu(), k - 1, s), spec)?;
        let vals = rule.points.par_iter().map(|z| nested_max(f, subs, scales, k - 1, z, spec)).collect::<Result<Vec<f64>>>()?;
        let avg = vals.iter().zip(&rule.weights).map(|(v, w)| v * w).sum::<f64>() / rule.volume;
        best = best.max(avg);
    }
    Ok(best)
}

/// Compares the joint maximal function `M f` with the iterated one-family
/// maximal functions `M_nu ... M_1 f` on a grid. Family `mu` is scaled by
/// parameter `mu` over `scales[mu]`; the joint radii are all combinations.
pub fn product_bound_check<F: Fn(&[f64]) -> f64 + Sync + ?Sized>(
    f: &F,
    sys: &GradedSystem,
    families: &[Vec<usize>],
    xs: &[Vec<f64>],
    scales: &[Vec<f64>],
    spec: &AverageSpec,
) -> Result<ProductBoundReport> {
    if families.len() != sys.nu() || scales.len() != sys.nu() || scales.iter().any(|s| s.is_empty()) {
        return Err(GeomError::InvalidArgument("one family and one nonempty scale set per parameter are required".into()));
    }
    let subs = families.iter().map(|fam| sys.subsystem(fam)).collect::<Result<Vec<_>>>()?;
    let joint_deltas: Vec<Vec<f64>> = scales.iter().map(|s| s.iter().copied()).multi_cartesian_product().collect();
    let joint = maximal_function(f, sys, xs, &joint_deltas, spec)?;
    let mut points = Vec::new();
    for (x, m) in xs.iter().zip(&joint.values) {
        let product = nested_max(f, &subs, scales, subs.len(), x, spec)?;
        let jm = m.ok_or(GeomError::DegenerateMinor)?;
        points.push(ProductPoint { x: x.clone(), joint: jm, product, ratio: jm / product });
    }
    let c_fit = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(ProductBoundReport { holds: points.iter().all(|p| p.ratio.is_finite()), c_fit, points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionReport {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub shape: Shape,
    pub vol1: f64,
    pub vol2: f64,
    pub vol_joint: f64,
    pub intersection: f64,
    pub stderr: f64,
    /// `Vol(B1 cap B2) Vol(B_joint) / (Vol(B1) Vol(B2))`.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// The family whose chart carried the samples (the smaller ball).
    pub sampled_in: usize,
    pub budget: usize,
    pub seed: u64,
}

/// Monte Carlo `Vol(B1(x, delta) cap B2(x, delta))` for two families, where
/// each ball is the chart image of the requested shape at unit radius unless
/// `AverageSpec::radius` fixes another. Samples are drawn in the chart of the
/// smaller ball and tested for membership in the other by inversion.
pub fn intersection_volume(
    sys: &GradedSystem,
    families: &[Vec<usize>],
    x: &[f64],
    delta: &[f64],
    budget: usize,
    seed: u64,
    spec: &AverageSpec,
) -> Result<IntersectionReport> {
    if families.len() != 2 {
        return Err(GeomError::InvalidArgument("intersection needs exactly two families".into()));
    }
    if budget < MIN_BUDGET {
        return Err(GeomError::InvalidArgument(format!("Monte Carlo budget {budget} is below {MIN_BUDGET}")));
    }
    check_families(sys, families, x, spec.chart.rank_tol)?;
    let all = FieldSet::unscaled(sys).matrix(x);
    let rk = |cols: &[usize]| linalg::rank(&linalg::select_columns(&all, cols), spec.chart.rank_tol);
    let union: Vec<usize> = families.iter().flatten().copied().unique().collect();
    if rk(&families[0]) != rk(&union) || rk(&families[1]) != rk(&union) {
        return Err(GeomError::LeafMismatch);
    }
    let r = spec.radius.unwrap_or(1.0);
    let fixed = AverageSpec { radius: Some(r), ..spec.clone() };
    let subs = families.iter().map(|f| sys.subsystem(f)).collect::<Result<Vec<_>>>()?;
    let cfg = &spec.chart;
    let maps = subs.iter().map(|s| ChartMap::new(s, x, delta, cfg.rank_tol, cfg.integrator.clone())).collect::<Result<Vec<_>>>()?;
    let vols = maps.iter().map(|m| rule_on_map(m, r, &fixed).map(|rl| rl.volume)).collect::<Result<Vec<f64>>>()?;
    let vol_joint = ball_rule(sys, x, delta, &fixed)?.volume;
    let (a, b) = if vols[0] <= vols[1] { (0, 1) } else { (1, 0) };
    let n0 = maps[a].n0();
    let dom = shape_volume(spec.shape, n0, r);
    let opts = InvertOptions::with_radius(2.0 * r * (maps[b].n0() as f64).sqrt() + 1.0);
    let vals = (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let u = sample_shape(&mut rng, spec.shape, n0, r);
            let jr = maps[a].jacobian(&u)?;
            if jr.left_domain {
                return Err(GeomError::LeftDomain);
            }
            let inv = maps[b].invert(&jr.endpoint, &opts)?;
            let hit = inv.inside() && shape_norm(spec.shape, &inv.u) < r;
            Ok(if hit { dom * linalg::gram_volume(&jr.du) } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = budget as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    let k = vol_joint / (vols[0] * vols[1]);
    Ok(IntersectionReport {
        x: x.to_vec(),
        delta: delta.to_vec(),
        shape: spec.shape,
        vol1: vols[0],
        vol2: vols[1],
        vol_joint,
        intersection: mean,
        stderr,
        ratio: mean * k,
        ratio_stderr: stderr * k,
        sampled_in: a + 1,
        budget,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    /// `inf_z sum_mu r_mu^{-1} rho_mu(z_{mu-1}, z_mu)` over straight legs.
    pub composed: f64,
    pub legs: Vec<f64>,
    pub joint: DistanceReport,
    /// `composed / rho_r(x, y)`; absent when the joint distance is not finite.
    pub ratio: Option<f64>,
    pub infinite: bool,
    pub residual: f64,
    pub starts: usize,
}

struct Legs<'a> {
    sets: Vec<FieldSet<'a>>,
    /// Degree of each field in its family's parameter.
    degrees: Vec<Vec<f64>>,
    r: Vec<f64>,
    cfg: IntegratorConfig,
}

impl Legs<'_> {
    fn dim(&self) -> usize {
        self.sets.iter().map(|s| s.len()).sum()
    }

    fn blocks<'b>(&self, a: &'b [f64]) -> Vec<&'b [f64]> {
        let mut out = Vec::new();
        let mut at = 0;
        for s in &self.sets {
            out.push(&a[at..at + s.len()]);
            at += s.len();
        }
        out
    }

    /// Endpoint of the legs in order (family 1 first) and its Jacobian in `a`.
    fn eval(&self, a: &[f64], x: &[f64]) -> Result<Option<(Vec<f64>, DMatrix<f64>)>> {
        let n = x.len();
        let mut cur = x.to_vec();
        let mut jac = DMatrix::zeros(n, self.dim());
        let mut at = 0;
        for (fs, u) in self.sets.iter().zip(self.blocks(a)) {
            let jr = flow_jacobian_with(fs, u, &cur, &self.cfg, JacobianMethod::Variational, true)?;
            if jr.left_domain {
                return Ok(None);
            }
            let dx = jr.dx0.expect("requested");
            if at > 0 {
                let prev = jac.columns(0, at).into_owned();
                jac.columns_mut(0, at).copy_from(&(&dx * prev));
            }
            jac.columns_mut(at, fs.len()).copy_from(&jr.du);
            at += fs.len();
            cur = jr.endpoint;
        }
        Ok(Some((cur, jac)))
    }

    /// Smallest `s` with `sum_j (a_j / s^{d_j})^2 <= 1`.
    fn leg_radius(a: &[f64], d: &[f64]) -> f64 {
        let g = |s: f64| a.iter().zip(d).map(|(v, e)| (v / s.powf(*e)).powi(2)).sum::<f64>();
        if a.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        let (mut lo, mut hi) = (-30.0f64, 15.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid.exp()) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi.exp()
    }

    fn legs(&self, a: &[f64]) -> Vec<f64> {
        self.blocks(a).iter().zip(&self.degrees).zip(&self.r).map(|((b, d), r)| Self::leg_radius(b, d) / r).collect()
    }

    fn cost(&self, a: &[f64]) -> f64 {
        self.legs(a).iter().sum()
    }

    /// Gauss-Newton onto the target; `None` if it does not converge.
    fn project(&self, a: &mut Vec<f64>, x: &[f64], y: &[f64], tol: f64) -> Result<Option<DMatrix<f64>>> {
        for _ in 0..30 {
            let Some((end, jac)) = self.eval(a, x)? else { return Ok(None) };
            let r = DVector::from_iterator(y.len(), end.iter().zip(y).map(|(p, q)| p - q));
            if r.norm() <= tol {
                return Ok(Some(jac));
            }
            let step = linalg::pinv(&jac, RANK_TOL) * &r;
            for (ai, s) in a.iter_mut().zip(step.iter()) {
                *ai -= s;
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }
        }
        Ok(None)
    }

    fn grad(&self, a: &[f64]) -> DVector<f64> {
        let scale = linalg::norm2(a).max(1e-12);
        DVector::from_iterator(
            a.len(),
            (0..a.len()).map(|i| {
                let h = 1e-6 * scale;
                let mut p = a.to_vec();
                let mut m = a.to_vec();
                p[i] += h;
                m[i] -= h;
                (self.cost(&p) - self.cost(&m)) / (2.0 * h)
            }),
        )
    }

    /// Descent of the leg cost along the constraint manifold.
    fn descend(&self, mut a: Vec<f64>, x: &[f64], y: &[f64], tol: f64) -> Result<Option<Vec<f64>>> {
        let Some(mut jac) = self.project(&mut a, x, y, tol)? else { return Ok(None) };
        let mut c0 = self.cost(&a);
        for _ in 0..200 {
            let g = self.grad(&a);
            let jp = linalg::pinv(&jac, RANK_TOL);
            let d = &g - &jp * (&jac * &g);
            if d.norm() <= 1e-12 * g.norm().max(1e-300) {
                break;
            }
            let mut t = 0.1 * linalg::norm2(&a).max(1e-12) / d.norm();
            let mut moved = false;
            while t * d.norm() > 1e-10 * linalg::norm2(&a).max(1e-12) {
                let mut cand: Vec<f64> = a.iter().zip(d.iter()).map(|(p, q)| p - t * q).collect();
                if let Some(j) = self.project(&mut cand, x, y, tol)? {
                    let c = self.cost(&cand);
                    if c < c0 {
                        moved = c0 - c > 1e-10 * c0;
                        a = cand;
                        jac = j;
                        c0 = c;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Ok(Some(a))
    }
}

/// Straight-leg estimate of `[(r_1^{-1} rho_1) o ... o (r_nu^{-1} rho_nu)](x, y)`
/// compared with the joint distance `rho_r(x, y)`.
///
/// Leg `mu` moves by `e^{a_mu . Z^mu}` (family 1 first) and costs the
/// smallest `s / r_mu` with `|a_mu / s^{d}|_2 <= 1`, matching the
/// straight-path reach used by [`cc_distance`]. The total cost is minimized
/// over `a` subject to reaching `y`, from the joint straight line, from each
/// single-family line and from seeded perturbations.
#[allow(clippy::too_many_arguments)]
pub fn metric_composition_check(
    sys: &GradedSystem,
    families: &[Vec<usize>],
    x: &[f64],
    y: &[f64],
    r: &[f64],
    tol: f64,
    seed: u64,
    cfg: &ChartConfig,
) -> Result<MetricReport> {
    if families.len() != sys.nu() {
        return Err(GeomError::InvalidArgument("one family per parameter is required".into()));
    }
    check_families(sys, families, x, cfg.rank_tol)?;
    let joint = cc_distance(sys, x, y, r, tol, cfg)?;
    let not_finite = |joint: DistanceReport| MetricReport {
        x: x.to_vec(),
        y: y.to_vec(),
        r: r.to_vec(),
        composed: f64::INFINITY,
        legs: vec![],
        infinite: joint.infinite,
        joint,
        ratio: None,
        residual: f64::NAN,
        starts: 0,
    };
    if joint.infinite || !joint.hi.is_finite() {
        return Ok(not_finite(joint));
    }
    let mut degrees = Vec::new();
    for (mu, fam) in families.iter().enumerate() {
        let d: Vec<f64> = fam.iter().map(|&j| sys.degree(j)[mu]).collect();
        if d.iter().any(|v| *v <= 0.0) {
            return Err(GeomError::InvalidArgument(format!("family {mu} has a field without degree in parameter {mu}")));
        }
        degrees.push(d);
    }
    let legs = Legs {
        sets: families.iter().map(|f| FieldSet::new(sys, f.clone(), vec![1.0; f.len()])).collect(),
        degrees,
        r: r.to_vec(),
        cfg: cfg.integrator.clone(),
    };
    let gap = DVector::from_iterator(x.len(), y.iter().zip(x).map(|(a, b)| a - b));
    let ptol = 1e-10 * gap.norm().max(1e-300);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let full = FieldSet::unscaled(sys).matrix(x);
    let cols: Vec<usize> = families.iter().flatten().copied().collect();
    starts.push((linalg::pinv(&linalg::select_columns(&full, &cols), RANK_TOL) * &gap).iter().copied().collect());
    let mut at = 0;
    for fam in families {
        let m = linalg::select_columns(&full, fam);
        let sol = linalg::pinv(&m, RANK_TOL) * &gap;
        if (&m * &sol - &gap).norm() <= 1e-6 * gap.norm() {
            let mut a = vec![0.0; legs.dim()];
            a[at..at + fam.len()].copy_from_slice(sol.as_slice());
            starts.push(a);
        }
        at += fam.len();
    }
    let mut rng = task_rng(seed, 0);
    let base = starts[0].clone();
    for _ in 0..3 {
        let s = linalg::norm2(&base);
        starts.push(base.iter().map(|v| v + s * rng.random_range(-0.5..0.5)).collect());
    }
    let runs = starts.par_iter().map(|a| legs.descend(a.clone(), x, y, ptol)).collect::<Result<Vec<_>>>()?;
    let best = runs.into_iter().flatten().min_by(|p, q| legs.cost(p).total_cmp(&legs.cost(q)));
    let Some(a) = best else {
        return Err(GeomError::MaxIterations(30));
    };
    let end = legs.eval(&a, x)?.map(|e| e.0).ok_or(GeomError::LeftDomain)?;
    let composed = legs.cost(&a);
    let mid = 0.5 * (joint.lo + joint.hi);
    Ok(MetricReport {
        x: x.to_vec(),
        y: y.to_vec(),
        r: r.to_vec(),
        composed,
        legs: legs.legs(&a),
        ratio: Some(composed / mid),
        infinite: false,
        residual: linalg::dist2(&end, y),
        starts: starts.len(),
        joint,
    })
}
