use approx::assert_abs_diff_eq;
use cc_geom::examples::{builtin, heisenberg_left, heisenberg_two_param};
use cc_geom::flows::{composed_exp, exp_map, flow_jacobian, flow_jacobian_with, IntegratorConfig, JacobianMethod};
use cc_geom::scaling::FieldSet;
use cc_geom::system::{BoxDomain, GradedField, GradedSystem};
use proptest::prelude::*;

fn line_system(coeff: &str) -> GradedSystem {
    GradedSystem::new(vec!["x".into()], 1, vec![GradedField::parse(&[coeff], &[1.0]).unwrap()], BoxDomain::cube(1, 50.0), None).unwrap()
}

fn cfg() -> IntegratorConfig {
    IntegratorConfig::default()
}

#[test]
fn constant_field() {
    let e = builtin("euclidean(2)").unwrap();
    let fs = FieldSet::new(&e, vec![0], vec![1.0]);
    let r = exp_map(&fs, &[0.3], &[1.0, 1.0], &cfg()).unwrap();
    assert_abs_diff_eq!(r.endpoint[0], 1.3, epsilon = 1e-14);
    assert_abs_diff_eq!(r.endpoint[1], 1.0, epsilon = 1e-14);
    assert!(!r.left_domain);
}

#[test]
fn linear_field() {
    let s = line_system("x");
    let fs = FieldSet::unscaled(&s);
    let r = exp_map(&fs, &[0.5], &[1.0], &cfg()).unwrap();
    assert_abs_diff_eq!(r.endpoint[0], 0.5f64.exp(), epsilon = 1e-9);
    assert_abs_diff_eq!(r.endpoint[0], 1.648721, epsilon = 1e-6);
}

#[test]
fn heisenberg_ray_from_origin() {
    let h = heisenberg_left().unwrap();
    let fs = FieldSet::new(&h, vec![0, 1], vec![1.0, 1.0]);
    for (a, b) in [(0.3, -0.7), (1.1, 0.4), (-0.2, -0.9)] {
        let r = exp_map(&fs, &[a, b], &[0.0, 0.0, 0.0], &cfg()).unwrap();
        assert_abs_diff_eq!(r.endpoint[0], a, epsilon = 1e-10);
        assert_abs_diff_eq!(r.endpoint[1], b, epsilon = 1e-10);
        assert_abs_diff_eq!(r.endpoint[2], 0.0, epsilon = 1e-10);
    }
}

#[test]
fn leaving_the_domain_is_flagged() {
    let e = builtin("euclidean(1)").unwrap();
    let fs = FieldSet::unscaled(&e);
    let r = exp_map(&fs, &[30.0], &[0.0], &cfg()).unwrap();
    assert!(r.left_domain);
}

#[test]
fn jacobian_at_zero_is_field_matrix() {
    let h = heisenberg_two_param().unwrap();
    let fs = FieldSet::unscaled(&h);
    let x0 = [0.4, -0.3, 0.2];
    let j = flow_jacobian(&fs, &[0.0; 6], &x0, &cfg()).unwrap();
    assert_eq!(j.du, h.field_matrix(&x0));
}

#[test]
fn constant_fields_have_constant_jacobian() {
    let e = builtin("euclidean(3)").unwrap();
    let fs = FieldSet::new(&e, vec![0, 1, 2], vec![0.5, 0.5, 0.5]);
    let j = flow_jacobian(&fs, &[0.2, -1.0, 0.7], &[0.0, 0.0, 0.0], &cfg()).unwrap();
    assert!((j.du - fs.matrix(&[0.0; 3])).abs().max() < 1e-12);
}

#[test]
fn linear_field_jacobian() {
    let s = line_system("x");
    let fs = FieldSet::unscaled(&s);
    let x0 = 1.7;
    let j = flow_jacobian_with(&fs, &[0.8], &[x0], &cfg(), JacobianMethod::Variational, true).unwrap();
    assert_abs_diff_eq!(j.du[(0, 0)], x0 * 0.8f64.exp(), epsilon = 1e-9);
    assert_abs_diff_eq!(j.dx0.unwrap()[(0, 0)], 0.8f64.exp(), epsilon = 1e-9);
}

#[test]
fn composed_single_family_is_exp_map() {
    let h = heisenberg_left().unwrap();
    let fs = FieldSet::unscaled(&h);
    let u = vec![0.3, -0.2, 0.1];
    let x0 = [0.1, 0.2, 0.3];
    let a = composed_exp(std::slice::from_ref(&fs), std::slice::from_ref(&u), &x0, &cfg()).unwrap();
    let b = exp_map(&fs, &u, &x0, &cfg()).unwrap();
    assert_eq!(a.endpoint, b.endpoint);
}

#[test]
fn commuting_translations_are_order_independent() {
    let e = builtin("euclidean-axes(2)").unwrap();
    let fx = FieldSet::new(&e, vec![0], vec![1.0]);
    let fy = FieldSet::new(&e, vec![1], vec![1.0]);
    let a = composed_exp(&[fx.clone(), fy.clone()], &[vec![0.4], vec![-0.9]], &[1.0, 2.0], &cfg()).unwrap();
    let b = composed_exp(&[fy, fx], &[vec![-0.9], vec![0.4]], &[1.0, 2.0], &cfg()).unwrap();
    assert_abs_diff_eq!(a.endpoint[0], b.endpoint[0], epsilon = 1e-13);
    assert_abs_diff_eq!(a.endpoint[1], b.endpoint[1], epsilon = 1e-13);
}

/// Group law `(x,y,t)(x',y',t') = (x+x', y+y', t+t'+2(yx'-xy'))`; left-invariant
/// flows multiply on the right, right-invariant flows on the left.
fn mul(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2] + 2.0 * (a[1] * b[0] - a[0] * b[1])]
}

#[test]
fn heisenberg_composition_order() {
    let h = heisenberg_two_param().unwrap();
    let xl = FieldSet::new(&h, vec![0], vec![1.0]);
    let yl = FieldSet::new(&h, vec![1], vec![1.0]);
    let o = [0.0; 3];
    // e^{X_L} e^{Y_L} 0: Y_L acts first.
    let a = composed_exp(&[xl.clone(), yl.clone()], &[vec![1.0], vec![1.0]], &o, &cfg()).unwrap();
    let b = composed_exp(&[yl, xl], &[vec![1.0], vec![1.0]], &o, &cfg()).unwrap();
    let ea = mul(mul(o, [0.0, 1.0, 0.0]), [1.0, 0.0, 0.0]);
    let eb = mul(mul(o, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0]);
    for l in 0..3 {
        assert_abs_diff_eq!(a.endpoint[l], ea[l], epsilon = 1e-9);
        assert_abs_diff_eq!(b.endpoint[l], eb[l], epsilon = 1e-9);
    }
    assert_abs_diff_eq!(a.endpoint[2] - b.endpoint[2], 4.0, epsilon = 1e-9);

    // Left and right families commute.
    let left = FieldSet::new(&h, vec![0, 1], vec![1.0, 1.0]);
    let right = FieldSet::new(&h, vec![3, 4], vec![1.0, 1.0]);
    let x0 = [0.2, -0.1, 0.3];
    let p = composed_exp(&[left.clone(), right.clone()], &[vec![0.5, 0.2], vec![-0.3, 0.6]], &x0, &cfg()).unwrap();
    let q = composed_exp(&[right, left], &[vec![-0.3, 0.6], vec![0.5, 0.2]], &x0, &cfg()).unwrap();
    let expect = mul(mul([-0.3, 0.6, 0.0], x0), [0.5, 0.2, 0.0]);
    for l in 0..3 {
        assert_abs_diff_eq!(p.endpoint[l], expect[l], epsilon = 1e-9);
        assert_abs_diff_eq!(q.endpoint[l], expect[l], epsilon = 1e-9);
    }
}

#[test]
fn rk4_is_fourth_order() {
    let s = line_system("x");
    let fs = FieldSet::unscaled(&s);
    let reference = exp_map(&fs, &[1.0], &[1.0], &IntegratorConfig::rk45(1e-13, 1e-13)).unwrap().endpoint[0];
    assert_abs_diff_eq!(reference, std::f64::consts::E, epsilon = 1e-11);
    let err = |steps| (exp_map(&fs, &[1.0], &[1.0], &IntegratorConfig::rk4(steps)).unwrap().endpoint[0] - reference).abs();
    for steps in [4, 8, 16] {
        let ratio = err(steps) / err(2 * steps);
        assert!(ratio >= 12.0, "halving from {steps} steps reduced error by {ratio}");
    }
}

#[test]
fn finite_difference_jacobian_matches() {
    let h = heisenberg_left().unwrap();
    let fs = FieldSet::unscaled(&h);
    let u = [0.3, -0.4, 0.2];
    let x0 = [0.1, 0.0, -0.2];
    let v = flow_jacobian(&fs, &u, &x0, &cfg()).unwrap();
    let f = flow_jacobian_with(&fs, &u, &x0, &cfg(), JacobianMethod::FiniteDifference { h: 1e-5 }, false).unwrap();
    assert!((v.du - f.du).abs().max() < 1e-7);
}

fn poly_system(c: &[i32]) -> GradedSystem {
    let f = |a: i32, b: i32, m: &str| format!("({a})+({b})*{m}");
    let fields = vec![
        GradedField::parse(&[&f(1, c[0], "y"), &f(0, c[1], "x*y"), &f(c[2], c[3], "x^2")], &[1.0]).unwrap(),
        GradedField::parse(&[&f(c[4], c[5], "z"), &f(1, c[6], "x"), &f(0, c[7], "y*z")], &[1.0]).unwrap(),
    ];
    GradedSystem::new(vec!["x".into(), "y".into(), "z".into()], 1, fields, BoxDomain::cube(3, 100.0), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reversibility(c in proptest::collection::vec(-2i32..=2, 8), u in proptest::array::uniform2(-0.3f64..0.3), x0 in proptest::array::uniform3(-0.5f64..0.5)) {
        let s = poly_system(&c);
        let fs = FieldSet::unscaled(&s);
        let fwd = exp_map(&fs, &u, &x0, &cfg()).unwrap();
        prop_assume!(!fwd.left_domain);
        let back = exp_map(&fs, &[-u[0], -u[1]], &fwd.endpoint, &cfg()).unwrap();
        for l in 0..3 {
            prop_assert!((back.endpoint[l] - x0[l]).abs() <= 1e-9 * (1.0 + x0[l].abs()));
        }
    }

    #[test]
    fn scaling_consistency(c in proptest::collection::vec(-2i32..=2, 8), u in proptest::array::uniform2(-0.3f64..0.3), k in 0.2f64..2.0) {
        let s = poly_system(&c);
        let fs = FieldSet::unscaled(&s);
        let x0 = [0.1, -0.2, 0.05];
        let a = exp_map(&fs.rescaled(k), &u, &x0, &cfg()).unwrap();
        let b = exp_map(&fs, &[k * u[0], k * u[1]], &x0, &cfg()).unwrap();
        for l in 0..3 {
            prop_assert!((a.endpoint[l] - b.endpoint[l]).abs() <= 1e-9 * (1.0 + b.endpoint[l].abs()));
        }
    }

    #[test]
    fn variational_matches_central_differences(c in proptest::collection::vec(-2i32..=2, 8), u in proptest::array::uniform2(-0.3f64..0.3), x0 in proptest::array::uniform3(-0.5f64..0.5)) {
        let s = poly_system(&c);
        let fs = FieldSet::unscaled(&s);
        let v = flow_jacobian_with(&fs, &u, &x0, &cfg(), JacobianMethod::Variational, true).unwrap();
        let f = flow_jacobian_with(&fs, &u, &x0, &cfg(), JacobianMethod::FiniteDifference { h: 1e-5 }, true).unwrap();
        let scale = 1.0 + v.du.abs().max();
        prop_assert!((&v.du - &f.du).abs().max() <= 1e-6 * scale);
        let (a, b) = (v.dx0.unwrap(), f.dx0.unwrap());
        prop_assert!((&a - &b).abs().max() <= 1e-6 * (1.0 + a.abs().max()));
    }
}
