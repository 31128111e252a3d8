use cc_expr::Program;
use cc_geom::balls::{
    self, ball_membership, cc_distance, doubling_ratio, generator_comparison, sample_reachable, Quadrature, SteerOptions, DEFAULT_SEGMENTS,
};
use cc_geom::chart::{build_chart, compare_with_frame, solve_structure_ode, verify_chart, ChartConfig, GridSpec};
use cc_geom::control::{check_control, line_grid, ControlConfig, DEFAULT_TS};
use cc_geom::examples::{builtin, catalog, default_families};
use cc_geom::operators::{
    self, compose_averages, intersection_volume, kernel_estimate, maximal_function, metric_composition_check, product_bound_check, AverageSpec,
    AvgQuadrature, Shape,
};
use cc_geom::system::{GradedField, GradedSystem};
use cc_geom::GeomError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Cli, Command, FamilyArgs, OutFormat, QuadArgs, QuadKind, ShapeArg};
use crate::{Outcome, UsageError};

/// Inputs resolved and validated before any computation.
pub struct Prepared {
    pub command: Command,
    pub sys: Option<GradedSystem>,
    pub points: Vec<Vec<f64>>,
    pub deltas: Vec<Vec<f64>>,
    pub cfg: ChartConfig,
    pub function: Option<Program>,
    pub families: Option<Vec<Vec<usize>>>,
    pub inputs: Value,
    pub tolerances: Value,
}

fn load_system(source: &str) -> Result<GradedSystem, UsageError> {
    match source.strip_prefix("builtin:") {
        Some(name) => Ok(builtin(name)?),
        None => {
            let text = std::fs::read_to_string(source).map_err(|e| UsageError(format!("cannot read {source}: {e}")))?;
            Ok(GradedSystem::from_json(&text)?)
        }
    }
}

fn parse_indices(text: &str) -> Result<Vec<usize>, UsageError> {
    text.split(',').map(|t| t.trim().parse::<usize>().map_err(|_| UsageError(format!("`{t}` is not a field index")))).collect()
}

fn parse_families(sys: &GradedSystem, args: &FamilyArgs) -> Result<Vec<Vec<usize>>, UsageError> {
    match &args.families {
        Some(text) => text.split(';').map(parse_indices).collect(),
        None => Ok(default_families(sys)?),
    }
}

/// `3^n` points in `{-0.5, 0, 0.5}^n` for `n <= 3`, the origin otherwise.
fn default_grid(n: usize) -> Vec<Vec<f64>> {
    if n > 3 {
        return vec![vec![0.0; n]];
    }
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|p: Vec<f64>| [-0.5, 0.0, 0.5].map(|v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

fn default_control_deltas(nu: usize) -> Vec<Vec<f64>> {
    match nu {
        2 => line_grid(&DEFAULT_TS),
        _ => DEFAULT_TS.iter().map(|t| vec![*t; nu]).collect(),
    }
}

pub fn prepare(cli: &Cli, seed: u64) -> Result<Prepared, UsageError> {
    let c = &cli.common;
    let command = cli.command.clone();
    if c.out == OutFormat::Csv && !command.has_csv() {
        return Err(UsageError(format!("`{}` has no tabular output; use --out json", command.name())));
    }
    let mut cfg = ChartConfig { eta: c.eta, ..ChartConfig::default() };
    if let Some(t) = c.rank_tol {
        cfg.rank_tol = t;
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let tolerances = json!({ "integrator": cfg.integrator, "rank_tol": cfg.rank_tol, "eta": cfg.eta, "grid": cfg.grid });
    if let Command::ListBuiltins { .. } = command {
        return Ok(Prepared {
            command,
            sys: None,
            points: vec![],
            deltas: vec![],
            cfg,
            function: None,
            families: None,
            inputs: json!({ "argv": argv }),
            tolerances,
        });
    }
    let source = c.system.clone().ok_or_else(|| UsageError("--system is required".into()))?;
    let sys = load_system(&source)?;
    let (n, nu) = (sys.n(), sys.nu());
    let mut points: Vec<Vec<f64>> = c.point.iter().map(|p| p.0.clone()).collect();
    let mut deltas: Vec<Vec<f64>> = c.delta.iter().map(|d| d.0.clone()).collect();
    if points.is_empty() {
        points = match command {
            Command::Control { .. } => default_grid(n),
            _ => vec![vec![0.0; n]],
        };
    }
    if deltas.is_empty() {
        deltas = match command {
            Command::Control { .. } => default_control_deltas(nu),
            _ => vec![vec![0.1; nu]],
        };
    }
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(UsageError(format!("point {p:?} needs {n} components")));
    }
    if let Some(d) = deltas.iter().find(|d| d.len() != nu) {
        return Err(UsageError(format!("radius {d:?} needs {nu} components")));
    }
    let function = match &command {
        Command::Average { function, .. } | Command::Compose { function, .. } | Command::Maxfn { function, .. } => {
            let e = cc_expr::parse(&function.function)?;
            Some(Program::compile(&e, sys.coords())?)
        }
        _ => None,
    };
    let families = match &command {
        Command::Compose { families, .. } | Command::Kernel { families, .. } | Command::Intersect { families, .. } | Command::Metric { families, .. } => {
            Some(parse_families(&sys, families)?)
        }
        Command::Maxfn { families, product: true, .. } => Some(parse_families(&sys, families)?),
        _ => None,
    };
    if let Some(f) = families.iter().flatten().flatten().find(|&&j| j >= sys.q()) {
        return Err(UsageError(format!("field index {f} out of range")));
    }
    let inputs = json!({ "argv": argv, "system": source, "points": points, "deltas": deltas, "families": families, "seed": seed });
    Ok(Prepared { command, sys: Some(sys), points, deltas, cfg, function, families, inputs, tolerances })
}

fn ball_quadrature(q: &QuadArgs, seed: u64) -> Quadrature {
    match q.quadrature {
        QuadKind::Grid => Quadrature::Polar { directions: q.directions, radial: q.radial },
        QuadKind::Mc => Quadrature::MonteCarlo { samples: q.samples, seed },
    }
}

fn avg_quadrature(q: &QuadArgs, seed: u64) -> AvgQuadrature {
    match q.quadrature {
        QuadKind::Grid => AvgQuadrature::Grid { directions: q.directions, radial: q.radial },
        QuadKind::Mc => AvgQuadrature::MonteCarlo { samples: q.samples, seed },
    }
}

fn shape(s: ShapeArg) -> Shape {
    match s {
        ShapeArg::Ball => Shape::Ball,
        ShapeArg::Cube => Shape::Cube,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn ok(v: Value) -> Result<Outcome, GeomError> {
    Ok(Outcome { result: Ok(v), csv: None })
}

fn direction(d: &Option<crate::args::Coords>, nu: usize) -> Vec<f64> {
    d.as_ref().map(|c| c.0.clone()).unwrap_or_else(|| vec![1.0; nu])
}

pub fn run(p: &Prepared, seed: u64) -> Outcome {
    match execute(p, seed) {
        Ok(o) => o,
        Err(e) => Outcome { result: Err(e.to_string()), csv: None },
    }
}

fn execute(p: &Prepared, seed: u64) -> Result<Outcome, GeomError> {
    if let Command::ListBuiltins { export } = &p.command {
        return match export {
            Some(name) => ok(serde_json::from_str(&builtin(name)?.to_json()).expect("system JSON parses")),
            None => ok(to_value(&catalog())),
        };
    }
    let sys = p.sys.as_ref().expect("prepared with a system");
    let cfg = &p.cfg;
    let (x, delta) = (&p.points[0], &p.deltas[0]);
    let f = |z: &[f64]| p.function.as_ref().expect("prepared with a function").eval(z);
    match &p.command {
        Command::Chart { samples } => {
            let chart = build_chart(sys, x, delta, cfg)?;
            let verify = verify_chart(&chart, *samples, seed)?;
            ok(json!({ "eta": chart.eta, "diagnostics": chart.diagnostics, "verify": verify }))
        }
        Command::Ode { tol, max_iter } => {
            let chart = build_chart(sys, x, delta, cfg)?;
            let sol = solve_structure_ode(&chart, GridSpec::default(), *tol, *max_iter)?;
            let frame = compare_with_frame(&chart, &sol)?;
            ok(json!({ "eta": chart.eta, "solution": sol, "frame_difference": frame }))
        }
        Command::Volume { quad, cloud } => {
            let mut report = balls::volume(sys, x, delta, cfg, &ball_quadrature(quad, seed))?;
            let Some(paths) = cloud else { return ok(to_value(&report)) };
            let c = sample_reachable(sys, x, delta, *paths, DEFAULT_SEGMENTS, seed, &cfg.integrator)?;
            report.cloud = Some(format!("{} points", c.points.len()));
            let mut rows = vec![sys.coords().to_vec()];
            rows.extend(c.points.iter().map(|q| q.iter().map(|v| num(*v)).collect()));
            Ok(Outcome { result: Ok(json!({ "volume": report, "cloud": c })), csv: Some(rows) })
        }
        Command::Doubling { quad } => ok(to_value(&doubling_ratio(sys, x, delta, cfg, &ball_quadrature(quad, seed))?)),
        Command::Distance { target, direction: d, tol } => {
            ok(to_value(&cc_distance(sys, x, &target.0, &direction(d, sys.nu()), *tol, cfg)?))
        }
        Command::Membership { target } => {
            let rows = target.iter().map(|y| ball_membership(sys, x, delta, &y.0, cfg)).collect::<Result<Vec<_>, _>>()?;
            ok(to_value(&rows))
        }
        Command::Control { candidate, candidate_degree, samples } => {
            let extra = match (candidate, candidate_degree) {
                (Some(c), Some(d)) => GradedField::parse(&c.split(',').collect::<Vec<_>>(), &d.0)?,
                (None, None) => sys.candidate().cloned().ok_or_else(|| GeomError::InvalidArgument("the system declares no candidate; pass --candidate and --candidate-degree".into()))?,
                _ => return Err(GeomError::InvalidArgument("--candidate and --candidate-degree go together".into())),
            };
            let cc = ControlConfig { samples: *samples, seed, rank_tol: cfg.rank_tol, integrator: cfg.integrator.clone(), ..ControlConfig::default() };
            ok(to_value(&check_control(sys, &extra, &p.points, &p.deltas, &cc)?))
        }
        Command::Average { quad, shape: s, radius, .. } => {
            let spec = AverageSpec { shape: shape(*s), radius: *radius, quadrature: avg_quadrature(quad, seed), chart: cfg.clone() };
            let mut rows = Vec::new();
            for x in &p.points {
                for d in &p.deltas {
                    let a = operators::average(&f, sys, x, d, &spec)?;
                    rows.push(json!({ "x": x, "delta": d, "average": a }));
                }
            }
            ok(json!({ "spec": spec, "averages": rows }))
        }
        Command::Compose { budget, .. } => {
            let fam = p.families.as_ref().expect("families");
            let mut rows = Vec::new();
            for (i, x) in p.points.iter().enumerate() {
                let r = compose_averages(&f, sys, fam, delta, x, *budget, seed.wrapping_add(i as u64), cfg)?;
                rows.push(json!({ "x": x, "compose": r }));
            }
            ok(json!({ "delta": delta, "results": rows }))
        }
        Command::Kernel { bins, budget, .. } => {
            let fam = p.families.as_ref().expect("families");
            let spec = AverageSpec { chart: cfg.clone(), ..AverageSpec::default() };
            let k = kernel_estimate(sys, fam, delta, x, *bins, *budget, seed, &spec)?;
            let mut rows = vec![(1..=k.n0).map(|i| format!("u{i}")).chain(["mass".to_string()]).collect::<Vec<_>>()];
            rows.extend(k.rows().into_iter().map(|(u, m)| u.iter().map(|v| num(*v)).chain([num(m)]).collect()));
            Ok(Outcome { result: Ok(to_value(&k)), csv: Some(rows) })
        }
        Command::Maxfn { quad, radius, product, .. } => {
            let spec = AverageSpec { radius: *radius, quadrature: avg_quadrature(quad, seed), chart: cfg.clone(), ..AverageSpec::default() };
            let grid = maximal_function(&f, sys, &p.points, &p.deltas, &spec)?;
            let fvals: Vec<f64> = p.points.iter().map(|z| f(z)).collect();
            let mvals: Vec<f64> = grid.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            let lp2 = operators::grid_lp_ratio(&fvals, &mvals, 2.0);
            let bound = if *product {
                let fam = p.families.as_ref().expect("families");
                let scales: Vec<Vec<f64>> = (0..sys.nu())
                    .map(|m| {
                        let mut s: Vec<f64> = p.deltas.iter().map(|d| d[m]).collect();
                        s.sort_by(f64::total_cmp);
                        s.dedup();
                        s
                    })
                    .collect();
                Some(product_bound_check(&f, sys, fam, &p.points, &scales, &spec)?)
            } else {
                None
            };
            let mut rows = vec![sys.coords().iter().cloned().chain(["value".to_string()]).collect::<Vec<_>>()];
            rows.extend(p.points.iter().zip(&mvals).map(|(z, v)| z.iter().map(|c| num(*c)).chain([num(*v)]).collect()));
            Ok(Outcome { result: Ok(json!({ "grid": grid, "lp2_ratio": lp2, "product": bound })), csv: Some(rows) })
        }
        Command::Intersect { budget, shape: s, .. } => {
            let fam = p.families.as_ref().expect("families");
            let spec = AverageSpec { shape: shape(*s), radius: Some(1.0), quadrature: AvgQuadrature::Grid { directions: None, radial: 6 }, chart: cfg.clone() };
            ok(to_value(&intersection_volume(sys, fam, x, delta, *budget, seed, &spec)?))
        }
        Command::Metric { target, direction: d, tol, .. } => {
            let fam = p.families.as_ref().expect("families");
            ok(to_value(&metric_composition_check(sys, fam, x, &target.0, &direction(d, sys.nu()), *tol, seed, cfg)?))
        }
        Command::Generators { generators, samples } => {
            let gens = match generators {
                Some(t) => t.split(',').map(|s| s.trim().parse::<usize>().map_err(|_| GeomError::InvalidArgument(format!("`{s}` is not a field index")))).collect::<Result<Vec<_>, _>>()?,
                None => {
                    let total = |j: usize| sys.degree(j).iter().sum::<f64>();
                    let least = (0..sys.q()).map(total).fold(f64::INFINITY, f64::min);
                    (0..sys.q()).filter(|&j| total(j) == least).collect()
                }
            };
            if let Some(j) = gens.iter().find(|&&j| j >= sys.q()) {
                return Err(GeomError::InvalidArgument(format!("field index {j} out of range")));
            }
            let w = sys.subsystem(&gens)?;
            ok(to_value(&generator_comparison(sys, &w, x, &p.deltas, *samples, seed, &SteerOptions::default(), cfg)?))
        }
        Command::ListBuiltins { .. } => unreachable!("handled above"),
    }
}
