use std::collections::HashMap;

use cc_expr::{differentiate, evaluate, parse, BinOp, Expr, ExprError, Func, Program};
use proptest::prelude::*;

fn at(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn parse_shapes() {
    assert!(matches!(parse("x^2").unwrap(), Expr::Pow(ref b, 2) if **b == Expr::var("x")));
    assert!(matches!(parse("cos(s)").unwrap(), Expr::Call(Func::Cos, ref a) if **a == Expr::var("s")));
    match parse("2*y - x").unwrap() {
        Expr::Bin(BinOp::Sub, l, r) => {
            assert!(matches!(*l, Expr::Bin(BinOp::Mul, ..)));
            assert_eq!(*r, Expr::var("x"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn evaluate_examples() {
    assert_eq!(evaluate(&parse("x^2").unwrap(), &at(&[("x", 3.0)])).unwrap(), 9.0);
    assert_eq!(evaluate(&parse("cos(s)").unwrap(), &at(&[("s", 0.0)])).unwrap(), 1.0);
    let v = evaluate(&parse("exp(-1/(x*x))").unwrap(), &at(&[("x", 0.5)])).unwrap();
    assert!((v - (-4.0f64).exp()).abs() < 1e-15);
    assert!((v - 0.0183156).abs() < 1e-7);
}

#[test]
fn precedence_and_associativity() {
    let empty = HashMap::new();
    assert_eq!(evaluate(&parse("2+3*4").unwrap(), &empty).unwrap(), 14.0);
    assert_eq!(evaluate(&parse("2^3^2").unwrap(), &empty).unwrap(), 512.0);
    assert_eq!(evaluate(&parse("-2^2").unwrap(), &empty).unwrap(), -4.0);
    assert_eq!(evaluate(&parse("2^-1").unwrap(), &empty).unwrap(), 0.5);
    assert_eq!(evaluate(&parse("8/4/2").unwrap(), &empty).unwrap(), 1.0);
    assert_eq!(evaluate(&parse("1 - 2 - 3").unwrap(), &empty).unwrap(), -4.0);
}

#[test]
fn error_cases() {
    assert!(matches!(parse("2 + * 3"), Err(ExprError::Syntax { offset: 4, .. })));
    assert!(matches!(parse("tan(x)"), Err(ExprError::UnknownFunction { offset: 0, .. })));
    assert!(matches!(parse("(x + 1"), Err(ExprError::Unbalanced { offset: 0 })));
    assert!(matches!(parse("x + 1)"), Err(ExprError::Unbalanced { offset: 5 })));
    assert!(matches!(parse("x^0.5"), Err(ExprError::NonIntegerExponent { offset: 2 })));
    assert!(matches!(parse("x^y"), Err(ExprError::NonIntegerExponent { .. })));
    assert!(matches!(parse(""), Err(ExprError::Syntax { .. })));
    assert!(matches!(parse("x $ y"), Err(ExprError::Syntax { offset: 2, .. })));
    let e = parse("x + y").unwrap();
    assert_eq!(evaluate(&e, &at(&[("x", 1.0)])), Err(ExprError::Unbound("y".into())));
    assert!(matches!(evaluate(&parse("1/x").unwrap(), &at(&[("x", 0.0)])), Err(ExprError::NonFinite(_))));
}

#[test]
fn derivative_examples() {
    assert_eq!(differentiate(&parse("x^2").unwrap(), "x").to_string(), "2.0*x");
    assert_eq!(differentiate(&parse("cos(s)").unwrap(), "s").to_string(), "-sin(s)");
    assert_eq!(differentiate(&parse("x*y").unwrap(), "x").to_string(), "y");
    assert_eq!(differentiate(&parse("x + 0*y").unwrap(), "y").to_string(), "0.0");
}

#[test]
fn program_matches_tree() {
    let coords = vec!["x".to_string(), "y".to_string()];
    let e = parse("sin(x)*y^3 - exp(x/(1+y^2))").unwrap();
    let p = Program::compile(&e, &coords).unwrap();
    for &(x, y) in &[(0.1, 0.2), (-1.0, 3.0), (2.5, -0.7)] {
        let tree = evaluate(&e, &at(&[("x", x), ("y", y)])).unwrap();
        assert_eq!(p.eval(&[x, y]), tree);
    }
    assert!(matches!(Program::compile(&parse("z").unwrap(), &coords), Err(ExprError::Unbound(_))));
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(Expr::var("x")),
        Just(Expr::var("y")),
        (-2.0f64..2.0).prop_map(Expr::Const),
    ];
    leaf.prop_recursive(5, 64, 2, |inner| {
        let safe = |e: Expr| Expr::Bin(BinOp::Add, Box::new(Expr::Const(2.5)), Box::new(Expr::Call(Func::Cos, Box::new(e))));
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::Bin(BinOp::Div, Box::new(a), Box::new(safe(b)))),
            (inner.clone(), 0i32..4).prop_map(|(a, n)| Expr::Pow(Box::new(a), n)),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
            inner.prop_map(|a| Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Sin, Box::new(a))))),
        ]
    })
}

fn depth(e: &Expr) -> usize {
    match e {
        Expr::Const(_) | Expr::Var(_) => 0,
        Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + depth(a),
        Expr::Bin(_, a, b) => 1 + depth(a).max(depth(b)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn symbolic_derivative_matches_central_difference(e in arb_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let d = differentiate(&e, "x");
        let exact = evaluate(&d, &at(&[("x", x), ("y", y)])).unwrap();
        let h = 1e-5;
        let f = |xx: f64| evaluate(&e, &at(&[("x", xx), ("y", y)])).unwrap();
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        prop_assert!((exact - fd).abs() <= 1e-6 * (1.0 + exact.abs()), "{e}: {exact} vs {fd}");
    }

    #[test]
    fn print_parse_round_trip(e in arb_expr(), pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 100)) {
        prop_assume!(depth(&e) <= 5 + 2);
        let back = parse(&e.to_string()).unwrap();
        for (x, y) in pts {
            let p = at(&[("x", x), ("y", y)]);
            let (a, b) = (evaluate(&e, &p), evaluate(&back, &p));
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!(a == b || (a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{e}"),
                (a, b) => prop_assert_eq!(a.is_ok(), b.is_ok()),
            }
        }
    }

    #[test]
    fn derivative_of_sum_is_sum_of_derivatives(a in arb_expr(), b in arb_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let p = at(&[("x", x), ("y", y)]);
        let lhs = evaluate(&differentiate(&Expr::Bin(BinOp::Add, Box::new(a.clone()), Box::new(b.clone())), "y"), &p).unwrap();
        let rhs = evaluate(&differentiate(&a, "y"), &p).unwrap() + evaluate(&differentiate(&b, "y"), &p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}
