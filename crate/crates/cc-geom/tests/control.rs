use cc_geom::control::{check_control, cramer_coefficients, line_grid, ControlConfig, Verdict, DEFAULT_TS};
use cc_geom::examples::{control_line, degree_line, euclidean};
use cc_geom::linalg::RANK_TOL;
use cc_geom::system::GradedField;
use proptest::prelude::*;

fn line_xs() -> Vec<Vec<f64>> {
    [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9].iter().map(|x| vec![*x]).collect()
}

fn scalar(ds: &[f64]) -> Vec<Vec<f64>> {
    ds.iter().map(|d| vec![*d]).collect()
}

#[test]
fn copy_of_first_field_gives_unit_vector() {
    let sys = euclidean(2).unwrap();
    let extra = GradedField::parse(&["1", "0"], &[1.0]).unwrap();
    let c = cramer_coefficients(&sys, &extra, &[0.3, 0.4], &[0.2], RANK_TOL).unwrap();
    assert_eq!(c, vec![1.0, 0.0]);
}

#[test]
fn euclidean_diagonal_field() {
    let sys = euclidean(2).unwrap();
    let extra = GradedField::parse(&["1", "1"], &[1.0]).unwrap();
    let c = cramer_coefficients(&sys, &extra, &[0.0, 0.0], &[0.1], RANK_TOL).unwrap();
    assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12, "{c:?}");
}

#[test]
fn control_line_coefficients_at_half() {
    let sys = control_line().unwrap();
    let extra = sys.candidate().unwrap().clone();
    let (x0, d) = (0.5f64, 0.25f64);
    let c = cramer_coefficients(&sys, &extra, &[x0], &[d], RANK_TOL).unwrap();
    let lhs = d.powf(1.5) * x0;
    assert!((lhs - (c[0] * d * d + c[1] * d * x0 * x0)).abs() < 1e-14);
    assert!(lhs.abs() <= (d * d).max(d * x0 * x0));
    // delta^2 and delta x0^2 tie at this point; the first column wins.
    assert!((c[0] - 1.0).abs() < 1e-12 && c[1] == 0.0, "{c:?}");
}

#[test]
fn control_line_candidate_is_controlled() {
    let sys = control_line().unwrap();
    let extra = sys.candidate().unwrap().clone();
    let r = check_control(&sys, &extra, &line_xs(), &scalar(&[0.1, 0.03, 0.01, 0.003]), &ControlConfig::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Controlled, "{:?}", r.trend);
    assert!(r.sigma_max <= 2.0, "{}", r.sigma_max);
    assert!(r.reconstruction_max <= 1e-8);
    assert!(r.probes.iter().all(|p| p.skipped.is_none()));
}

fn degree_line_verdict(c: f64, d: f64) -> (Verdict, bool, f64) {
    let sys = degree_line(1.0, 1.0, c, d).unwrap();
    let extra = sys.candidate().unwrap().clone();
    let xs = vec![vec![-0.5], vec![0.0], vec![0.5]];
    let cfg = ControlConfig { samples: 32, ..ControlConfig::default() };
    let r = check_control(&sys, &extra, &xs, &line_grid(&DEFAULT_TS), &cfg).unwrap();
    assert!(r.reconstruction_max <= 1e-8);
    if r.verdict == Verdict::Controlled {
        assert!(r.kappa1_min >= 0.5, "{}", r.kappa1_min);
    }
    (r.verdict, r.marginal, r.trend.slope)
}

#[test]
fn degree_line_threshold() {
    let (v, _, s) = degree_line_verdict(0.4, 0.4);
    assert_eq!(v, Verdict::NotControlled);
    assert!((s - 0.2).abs() < 1e-6, "{s}");
    let (v, m, _) = degree_line_verdict(0.6, 0.6);
    assert_eq!(v, Verdict::Controlled);
    assert!(!m);
    let (v, m, s) = degree_line_verdict(0.5, 0.5);
    assert_eq!(v, Verdict::Controlled);
    assert!(m);
    assert!(s.abs() < 1e-9);
}

#[test]
fn existing_field_has_unit_sigma() {
    let sys = control_line().unwrap();
    let extra = sys.fields()[0].clone();
    let r = check_control(&sys, &extra, &line_xs(), &scalar(&[0.1, 0.01]), &ControlConfig { samples: 32, ..ControlConfig::default() }).unwrap();
    assert_eq!(r.verdict, Verdict::Controlled);
    assert!((r.sigma_max - 1.0).abs() < 1e-9, "{}", r.sigma_max);
}

#[test]
fn candidate_outside_the_span_is_not_controlled() {
    let sys = euclidean(2).unwrap().subsystem(&[0]).unwrap();
    let extra = GradedField::parse(&["0", "1"], &[1.0]).unwrap();
    let r = check_control(&sys, &extra, &[vec![0.0, 0.0]], &scalar(&[0.1, 0.01]), &ControlConfig { samples: 8, ..ControlConfig::default() }).unwrap();
    assert_eq!(r.verdict, Verdict::NotControlled);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cramer_reconstructs_the_candidate(x in -1.0f64..1.0, d1 in 0.001f64..1.0, d2 in 0.001f64..1.0, c in 0.0f64..1.5, e in 0.0f64..1.5) {
        let sys = degree_line(1.0, 1.0, c, e).unwrap();
        let extra = sys.candidate().unwrap().clone();
        let coef = cramer_coefficients(&sys, &extra, &[x], &[d1, d2], RANK_TOL).unwrap();
        let lhs = d1.powf(c) * d2.powf(e);
        let rhs = coef[0] * d1 + coef[1] * d2;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * d1.max(d2));
    }
}
