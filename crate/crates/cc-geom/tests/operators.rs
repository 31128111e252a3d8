use cc_geom::chart::{build_chart, bump_function, ChartConfig};
use cc_geom::examples::{default_families, euclidean, euclidean_anisotropic, euclidean_axes, heisenberg_left, heisenberg_two_param};
use cc_geom::operators::*;
use cc_geom::rng::task_rng;
use proptest::prelude::*;
use rand::Rng;

fn one(_: &[f64]) -> f64 {
    1.0
}

fn grid(radial: usize) -> AverageSpec {
    AverageSpec { quadrature: AvgQuadrature::Grid { directions: None, radial }, ..Default::default() }
}

#[test]
fn average_of_one_is_one() {
    let sys = heisenberg_left().unwrap();
    let a = average(&one, &sys, &[0.2, -0.1, 0.3], &[0.1], &AverageSpec::default()).unwrap();
    assert!((a.value - 1.0).abs() < 1e-12);
    assert!(a.volume > 0.0);
}

#[test]
fn first_coordinate_averages_to_zero() {
    let sys = euclidean(2).unwrap();
    let a = average(&|p: &[f64]| p[0], &sys, &[0.0, 0.0], &[0.3], &AverageSpec::default()).unwrap();
    assert!(a.value.abs() < 1e-14, "{}", a.value);
}

#[test]
fn square_on_a_line_segment() {
    let sys = euclidean(1).unwrap();
    let a = average(&|p: &[f64]| p[0] * p[0], &sys, &[0.0], &[0.4], &AverageSpec::default()).unwrap();
    let h = a.radius * 0.4;
    assert!((a.value - h * h / 3.0).abs() < 1e-14, "{} vs {}", a.value, h * h / 3.0);
}

#[test]
fn monte_carlo_average_normalizes() {
    let sys = heisenberg_left().unwrap();
    let spec = AverageSpec { quadrature: AvgQuadrature::MonteCarlo { samples: 2000, seed: 3 }, ..Default::default() };
    let a = average(&one, &sys, &[0.0, 0.0, 0.0], &[0.1], &spec).unwrap();
    assert!((a.value - 1.0).abs() < 1e-12);
    assert_eq!(a.stderr, 0.0);
    let small = AverageSpec { quadrature: AvgQuadrature::MonteCarlo { samples: 10, seed: 3 }, ..Default::default() };
    assert!(average(&one, &sys, &[0.0, 0.0, 0.0], &[0.1], &small).is_err());
}

#[test]
fn single_family_composition_matches_the_cube_average() {
    let sys = euclidean(2).unwrap();
    let f = |p: &[f64]| 1.0 + p[0] * p[0] + 3.0 * p[1] + p[0] * p[1];
    let (x, d) = ([0.3, -0.2], [0.4]);
    let c = compose_averages(&f, &sys, &[vec![0, 1]], &d, &x, 20_000, 11, &ChartConfig::default()).unwrap();
    let spec = AverageSpec::cube(1.0 / 2f64.sqrt(), 6);
    let a = average(&f, &sys, &x, &d, &spec).unwrap();
    assert!((c.value - a.value).abs() <= 3.0 * c.stderr, "{} vs {} (se {})", c.value, a.value, c.stderr);
    assert_eq!(c.exits, 0);
    assert!(!c.flagged);
}

#[test]
fn composition_of_one_is_one() {
    let sys = heisenberg_two_param().unwrap();
    let fam = default_families(&sys).unwrap();
    let c = compose_averages(&one, &sys, &fam, &[0.1, 0.1], &[0.1, 0.2, 0.0], 1000, 5, &ChartConfig::default()).unwrap();
    assert_eq!(c.value, 1.0);
    assert_eq!(c.stderr, 0.0);
}

#[test]
fn composition_needs_a_spanning_union() {
    let sys = euclidean_axes(2).unwrap();
    assert!(compose_averages(&one, &sys, &[vec![0]], &[0.1, 0.1], &[0.0, 0.0], 1000, 5, &ChartConfig::default()).is_err());
}

fn polys() -> Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> {
    vec![
        Box::new(|_: &[f64]| 1.0),
        Box::new(|p: &[f64]| 1.0 + p[0] * p[0]),
        Box::new(|p: &[f64]| 1.0 + p[1] * p[1]),
        Box::new(|p: &[f64]| 1.0 + 4.0 * p[2] * p[2]),
        Box::new(|p: &[f64]| 0.5 + p[0] * p[0] + p[1] * p[1]),
        Box::new(|p: &[f64]| 0.1 + (p[0] - p[1]).powi(2)),
        Box::new(|p: &[f64]| 1.0 + (p[0] + p[2]).powi(2)),
        Box::new(|p: &[f64]| 0.5 + p[0] * p[0] * p[1] * p[1]),
        Box::new(|p: &[f64]| 2.0 + p[0] + p[1]),
        Box::new(|p: &[f64]| 1.0 + p[0] * p[0] + p[1] * p[1] + p[2] * p[2]),
    ]
}

fn centers(count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            (0..3).map(|_| rng.random_range(-0.5..0.5)).collect()
        })
        .collect()
}

#[test]
fn heisenberg_sandwich_constants_are_stable() {
    let sys = heisenberg_two_param().unwrap();
    let fam = default_families(&sys).unwrap();
    let fs = polys();
    let refs: Vec<&(dyn Fn(&[f64]) -> f64 + Sync)> = fs.iter().map(|b| b.as_ref()).collect();
    let xs = centers(6, 21);
    let spec = grid(4);
    let a = sandwich_fit(&refs, &sys, &fam, &xs, &[0.2, 0.2], 0.5, 2000, 9, &spec).unwrap();
    let b = sandwich_fit(&refs, &sys, &fam, &xs, &[0.2, 0.2], 0.5, 4000, 9, &spec).unwrap();
    eprintln!("sandwich {a:?} {b:?}");
    for (p, q) in [(a.c_lower, b.c_lower), (a.c_upper, b.c_upper)] {
        assert!(p.is_finite() && p > 0.0);
        assert!((p - q).abs() / q < 0.2);
    }
    assert!(a.c_lower <= 1.0 + 1e-2 && a.c_upper >= 1.0 - 1e-2);
}

#[test]
fn commuting_translations_have_a_flat_kernel() {
    let sys = euclidean_axes(2).unwrap();
    let fam = default_families(&sys).unwrap();
    let k = kernel_estimate(&sys, &fam, &[0.2, 0.1], &[0.1, 0.3], 5, 40_000, 2, &AverageSpec::default()).unwrap();
    assert!((k.mass - 1.0).abs() < 1e-6);
    assert!((k.diagonal_times_volume - 1.0).abs() < 0.1, "{}", k.diagonal_times_volume);
    assert_eq!(k.support_fraction, 1.0);
    assert_eq!(k.histogram.len(), 25);
    assert_eq!(k.rows().len(), 25);
}

#[test]
fn heisenberg_kernel_diagonal() {
    let sys = heisenberg_two_param().unwrap();
    let fam = default_families(&sys).unwrap();
    for d in [[0.2, 0.2], [0.1, 0.2], [0.2, 0.05]] {
        let k = kernel_estimate(&sys, &fam, &d, &[0.1, -0.2, 0.3], 9, 8000, 4, &AverageSpec::default()).unwrap();
        eprintln!("kernel {d:?}: {} unplaced {}", k.diagonal_times_volume, k.unplaced);
        assert!((k.mass - 1.0).abs() < 1e-6);
        assert!(k.diagonal_times_volume > 0.1 && k.diagonal_times_volume < 10.0);
        assert_eq!(k.support_fraction, 1.0);
    }
}

#[test]
fn maximal_function_examples() {
    let sys = heisenberg_left().unwrap();
    let xs = vec![vec![0.0, 0.0, 0.0], vec![0.3, 0.1, -0.2]];
    let ds = vec![vec![0.05], vec![0.1], vec![0.2]];
    let m = maximal_function(&one, &sys, &xs, &ds, &grid(4)).unwrap();
    assert!(m.values.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));

    let e = euclidean(2).unwrap();
    let xs = vec![vec![0.0, 0.0]];
    let ds = vec![vec![0.05], vec![0.1], vec![0.3]];
    let norm = |p: &[f64]| (p[0] * p[0] + p[1] * p[1]).sqrt();
    let m = maximal_function(&norm, &e, &xs, &ds, &AverageSpec::default()).unwrap();
    let top = average(&norm, &e, &xs[0], &ds[2], &AverageSpec::default()).unwrap().value;
    assert_eq!(m.argmax[0], Some(2));
    assert_eq!(m.values[0], Some(top));

    let x0 = [0.1, 0.2, 0.0];
    let chart = build_chart(&sys, &x0, &[0.4], &ChartConfig::default()).unwrap();
    let bump = bump_function(&chart, 0.5).unwrap();
    let f = |p: &[f64]| bump.eval(p);
    let m = maximal_function(&f, &sys, &[x0.to_vec()], &[vec![0.02], vec![0.05]], &grid(4)).unwrap();
    assert!((m.values[0].unwrap() - 1.0).abs() < 1e-12, "{:?}", m.values);
}

#[test]
fn maximal_function_records_failures() {
    let sys = euclidean(1).unwrap();
    let m = maximal_function(&one, &sys, &[vec![0.0]], &[vec![0.1], vec![2.0]], &AverageSpec::default()).unwrap();
    assert_eq!(m.values[0], Some(1.0));
    assert_eq!(m.skipped.len(), 1);
    assert_eq!(m.skipped[0].delta, 1);
}

#[test]
fn lp_ratio_of_equal_grids_is_one() {
    assert_eq!(grid_lp_ratio(&[1.0, 2.0], &[2.0, 1.0], 2.0), 1.0);
    assert!((grid_lp_ratio(&[1.0, 1.0], &[2.0, 2.0], 3.0) - 2.0).abs() < 1e-15);
}

fn line_grid(n: usize, half: f64, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = -half + 2.0 * half * i as f64 / (n - 1) as f64;
            (0..dim).map(|k| if k == 0 { t } else { 0.5 * t }).collect()
        })
        .collect()
}

#[test]
fn strong_maximal_bound_on_the_plane() {
    let sys = euclidean_axes(2).unwrap();
    let fam = default_families(&sys).unwrap();
    let scales = vec![vec![0.05, 0.1, 0.2], vec![0.05, 0.1, 0.2]];
    let spec = AverageSpec { radius: Some(1.0), ..grid(6) };
    let f = |p: &[f64]| (-(p[0] * p[0] + 4.0 * p[1] * p[1]) / 0.02).exp();
    let a = product_bound_check(&f, &sys, &fam, &line_grid(5, 0.3, 2), &scales, &spec).unwrap();
    let b = product_bound_check(&f, &sys, &fam, &line_grid(9, 0.3, 2), &scales, &spec).unwrap();
    eprintln!("euclidean product C {} {}", a.c_fit, b.c_fit);
    assert!(a.holds && b.holds);
    assert!(a.c_fit <= 5.0 && b.c_fit <= 5.0);
    assert!((a.c_fit - b.c_fit).abs() / a.c_fit < 0.2);
    let c = product_bound_check(&one, &sys, &fam, &line_grid(3, 0.3, 2), &scales, &spec).unwrap();
    assert!((c.c_fit - 1.0).abs() < 1e-12);
}

#[test]
fn heisenberg_product_bound_is_stable() {
    let sys = heisenberg_two_param().unwrap();
    let fam = default_families(&sys).unwrap();
    let scales = vec![vec![0.1, 0.2], vec![0.1, 0.2]];
    let spec = AverageSpec { radius: Some(0.5), quadrature: AvgQuadrature::Grid { directions: Some(16), radial: 2 }, ..Default::default() };
    let f = |p: &[f64]| 1.0 / (1.0 + 10.0 * (p[0] * p[0] + p[1] * p[1]) + 40.0 * p[2] * p[2]);
    let a = product_bound_check(&f, &sys, &fam, &line_grid(3, 0.3, 3), &scales, &spec).unwrap();
    let b = product_bound_check(&f, &sys, &fam, &line_grid(5, 0.3, 3), &scales, &spec).unwrap();
    eprintln!("heisenberg product C {} {}", a.c_fit, b.c_fit);
    assert!(a.holds && b.holds);
    assert!((a.c_fit - b.c_fit).abs() / a.c_fit < 0.2);
}

#[test]
fn anisotropic_boxes_intersect_exactly() {
    let sys = euclidean_anisotropic().unwrap();
    let fam = default_families(&sys).unwrap();
    for d in [[0.3, 0.2], [0.1, 0.4], [0.5, 0.5]] {
        let r = intersection_volume(&sys, &fam, &[0.1, -0.1], &d, 20_000, 7, &AverageSpec::cube(1.0, 4)).unwrap();
        assert!((r.ratio - 1.0).abs() < 0.03, "{d:?}: {}", r.ratio);
    }
}

#[test]
fn identical_families_self_consistency() {
    let sys = heisenberg_left().unwrap();
    let r = intersection_volume(&sys, &[vec![0, 1, 2], vec![0, 1, 2]], &[0.1, 0.0, 0.0], &[0.2], 4000, 7, &AverageSpec::cube(1.0, 4)).unwrap();
    assert!(r.ratio > 0.1 && r.ratio < 10.0);
    assert!((r.ratio - 1.0).abs() < 0.03, "{}", r.ratio);
}

#[test]
fn heisenberg_intersection_grid() {
    let sys = heisenberg_two_param().unwrap();
    let fam = default_families(&sys).unwrap();
    for d1 in [0.05, 0.1, 0.2] {
        for d2 in [0.05, 0.1, 0.2] {
            let r = intersection_volume(&sys, &fam, &[0.1, 0.2, 0.0], &[d1, d2], 4000, 13, &AverageSpec::cube(1.0, 4)).unwrap();
            eprintln!("intersection ({d1},{d2}): {} +- {}", r.ratio, r.ratio_stderr);
            assert!(r.ratio > 0.1 && r.ratio < 10.0);
        }
    }
}

#[test]
fn intersection_rejects_different_leaves() {
    let sys = euclidean_axes(2).unwrap();
    let r = intersection_volume(&sys, &[vec![0], vec![1]], &[0.0, 0.0], &[0.1, 0.1], 1000, 1, &AverageSpec::cube(1.0, 4));
    assert!(matches!(r, Err(cc_geom::GeomError::LeafMismatch)));
}

#[test]
fn single_family_metric_is_the_distance() {
    let sys = euclidean(2).unwrap();
    let tol = 1e-7;
    let m = metric_composition_check(&sys, &[vec![0, 1]], &[0.0, 0.0], &[0.3, 0.4], &[1.0], tol, 1, &ChartConfig::default()).unwrap();
    let ratio = m.ratio.unwrap();
    assert!((ratio - 1.0).abs() <= 2.0 * tol, "{ratio}");
}

#[test]
fn axis_families_compose_to_l1() {
    let sys = euclidean_axes(2).unwrap();
    let fam = default_families(&sys).unwrap();
    let tol = 1e-7;
    for y in [[0.3, 0.4], [0.5, 0.0], [-0.2, 0.6]] {
        let m = metric_composition_check(&sys, &fam, &[0.0, 0.0], &y, &[1.0, 1.0], tol, 1, &ChartConfig::default()).unwrap();
        let ratio = m.ratio.unwrap();
        let expect = (y[0].abs() + y[1].abs()) / (y[0] * y[0] + y[1] * y[1]).sqrt();
        assert!(ratio >= 1.0 - 1e-6 && ratio <= 2.0, "{ratio}");
        assert!((ratio - expect).abs() < 1e-5, "{ratio} vs {expect}");
    }
}

#[test]
fn heisenberg_metric_composition() {
    let sys = heisenberg_two_param().unwrap();
    let fam = default_families(&sys).unwrap();
    let mut rng = task_rng(17, 0);
    for _ in 0..5 {
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-0.1..0.1)).collect();
        let m = metric_composition_check(&sys, &fam, &[0.0, 0.0, 0.0], &y, &[1.0, 1.0], 1e-6, 3, &ChartConfig::default()).unwrap();
        eprintln!("metric {y:?}: {:?} legs {:?} joint {}", m.ratio, m.legs, m.joint.hi);
        let ratio = m.ratio.unwrap();
        assert!(ratio >= 1.0 - 1e-3 && ratio <= 10.0, "{ratio}");
        assert!(m.residual < 1e-8);
    }
}

#[test]
fn metric_off_the_leaf_is_flagged() {
    let sys = euclidean_axes(2).unwrap().subsystem(&[0]).unwrap().regraded(1, &[vec![1.0]]).unwrap();
    let m = metric_composition_check(&sys, &[vec![0]], &[0.0, 0.0], &[0.1, 0.1], &[1.0], 1e-6, 1, &ChartConfig::default()).unwrap();
    assert!(m.infinite);
    assert!(m.ratio.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn averages_normalize(x in -0.5f64..0.5, y in -0.5f64..0.5, t in -0.5f64..0.5, d in 0.01f64..0.5) {
        let sys = heisenberg_left().unwrap();
        let spec = AverageSpec { radius: Some(0.5), ..grid(3) };
        let a = average(&one, &sys, &[x, y, t], &[d], &spec).unwrap();
        prop_assert!((a.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn averages_are_monotone(x in -0.5f64..0.5, y in -0.5f64..0.5, d in 0.01f64..0.5, c in 0.0f64..1.0) {
        let sys = heisenberg_left().unwrap();
        let f = |p: &[f64]| p[0] * p[0];
        let g = |p: &[f64]| p[0] * p[0] + c * (1.0 + p[1] * p[1]);
        let spec = AverageSpec { radius: Some(0.5), ..grid(3) };
        let a = average(&f, &sys, &[x, y, 0.0], &[d], &spec).unwrap();
        let b = average(&g, &sys, &[x, y, 0.0], &[d], &spec).unwrap();
        prop_assert!(a.value <= b.value + 1e-12);
        let fam = vec![vec![0, 1, 2]];
        let cf = compose_averages(&f, &sys, &fam, &[d], &[x, y, 0.0], 1000, 3, &ChartConfig::default()).unwrap();
        let cg = compose_averages(&g, &sys, &fam, &[d], &[x, y, 0.0], 1000, 3, &ChartConfig::default()).unwrap();
        prop_assert!(cf.value <= cg.value + 3.0 * cg.stderr);
    }

    #[test]
    fn kernel_mass_is_one(d1 in 0.05f64..0.3, d2 in 0.05f64..0.3, seed in 0u64..1000) {
        let sys = euclidean_axes(2).unwrap();
        let fam = default_families(&sys).unwrap();
        let k = kernel_estimate(&sys, &fam, &[d1, d2], &[0.0, 0.0], 7, 1000, seed, &AverageSpec::default()).unwrap();
        prop_assert!((k.mass - 1.0).abs() < 1e-6);
    }
}
