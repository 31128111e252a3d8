//! Builtin catalog of example systems.

use cc_expr::{parse, Expr};
use serde::Serialize;

use crate::error::{GeomError, Result};
use crate::system::{BoxDomain, GradedField, GradedSystem};

#[derive(Debug, Clone, Serialize)]
pub struct ExampleDescriptor {
    pub name: &'static str,
    pub summary: &'static str,
    /// A point and radius where chart construction is expected to succeed.
    pub probe_point: Vec<f64>,
    pub probe_delta: Vec<f64>,
}

/// Catalog entries with parameters filled in with representative values.
pub fn catalog() -> Vec<ExampleDescriptor> {
    vec![
        ExampleDescriptor {
            name: "euclidean(n)",
            summary: "coordinate fields (d_i, 1) on R^n",
            probe_point: vec![0.0, 0.0],
            probe_delta: vec![0.1],
        },
        ExampleDescriptor {
            name: "euclidean-axes(n)",
            summary: "(d_mu, e_mu) on R^n, one parameter per axis",
            probe_point: vec![0.0, 0.0],
            probe_delta: vec![0.1, 0.1],
        },
        ExampleDescriptor {
            name: "euclidean-anisotropic",
            summary: "(d_x,(1,0)), (d_y,(2,0)), (d_x,(0,2)), (d_y,(0,1)) on R^2",
            probe_point: vec![0.0, 0.0],
            probe_delta: vec![0.1, 0.1],
        },
        ExampleDescriptor {
            name: "heisenberg-left",
            summary: "left-invariant X_L, Y_L with degree 1 and T with degree 2",
            probe_point: vec![0.0, 0.0, 0.0],
            probe_delta: vec![0.1],
        },
        ExampleDescriptor {
            name: "heisenberg-two-param",
            summary: "left-invariant list in parameter 1, right-invariant list in parameter 2",
            probe_point: vec![0.0, 0.0, 0.0],
            probe_delta: vec![0.1, 0.1],
        },
        ExampleDescriptor {
            name: "grushin",
            summary: "(d_x,1), (x d_y,1), (d_y,2) on R^2",
            probe_point: vec![0.0, 0.0],
            probe_delta: vec![0.1],
        },
        ExampleDescriptor {
            name: "r4-cos-sin",
            summary: "seven two-parameter fields on R^4 built from cos and sin",
            probe_point: vec![0.0, 0.0, 0.0, 0.0],
            probe_delta: vec![0.1, 0.1],
        },
        ExampleDescriptor {
            name: "weakly-comparable-counterexample",
            summary: "(d_x,(1,0,0)), (exp(-1/x^2) d_y,(0,1,0)), (d_y,(0,0,1)) on R^2",
            probe_point: vec![0.0, 0.0],
            probe_delta: vec![0.25, 0.25, 0.0],
        },
        ExampleDescriptor {
            name: "control-line",
            summary: "(d_x,2), (x^2 d_x,1) on [-1,1] with candidate (x d_x,1.5)",
            probe_point: vec![0.5],
            probe_delta: vec![0.1],
        },
        ExampleDescriptor {
            name: "degree-line(a,b,c,d)",
            summary: "(d_x,(a,0)), (d_x,(0,b)) on [-1,1] with candidate (d_x,(c,d))",
            probe_point: vec![0.0],
            probe_delta: vec![0.1, 0.1],
        },
    ]
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn coords(c: &[&str]) -> Vec<String> {
    c.iter().map(|s| s.to_string()).collect()
}

fn field(coeffs: &[&str], degree: &[f64]) -> GradedField {
    GradedField::parse(coeffs, degree).expect("builtin coefficients parse")
}

/// A `q x q x q` structure array with the given nonzero entries.
fn structure(q: usize, entries: &[(usize, usize, usize, &str)]) -> Vec<Vec<Vec<Expr>>> {
    let mut s = vec![vec![vec![Expr::Const(0.0); q]; q]; q];
    for &(i, j, k, e) in entries {
        let v = parse(e).expect("builtin structure parses");
        s[j][i][k] = Expr::neg(v.clone());
        s[i][j][k] = v;
    }
    s
}

fn unit_fields(n: usize, degree: impl Fn(usize) -> Vec<f64>) -> Vec<GradedField> {
    (0..n)
        .map(|i| {
            let coeffs: Vec<&str> = (0..n).map(|k| if k == i { "1" } else { "0" }).collect();
            field(&coeffs, &degree(i))
        })
        .collect()
}

pub fn euclidean(n: usize) -> Result<GradedSystem> {
    if n == 0 {
        return Err(GeomError::InvalidArgument("euclidean needs n >= 1".into()));
    }
    GradedSystem::new(names("x", n), 1, unit_fields(n, |_| vec![1.0]), BoxDomain::cube(n, 10.0), None)
}

pub fn euclidean_axes(n: usize) -> Result<GradedSystem> {
    if n == 0 {
        return Err(GeomError::InvalidArgument("euclidean-axes needs n >= 1".into()));
    }
    let fields = unit_fields(n, |i| {
        let mut d = vec![0.0; n];
        d[i] = 1.0;
        d
    });
    GradedSystem::new(names("x", n), n, fields, BoxDomain::cube(n, 10.0), None)
}

pub fn euclidean_anisotropic() -> Result<GradedSystem> {
    let fields = vec![
        field(&["1", "0"], &[1.0, 0.0]),
        field(&["0", "1"], &[2.0, 0.0]),
        field(&["1", "0"], &[0.0, 2.0]),
        field(&["0", "1"], &[0.0, 1.0]),
    ];
    GradedSystem::new(coords(&["x", "y"]), 2, fields, BoxDomain::cube(2, 10.0), None)
}

pub fn heisenberg_left() -> Result<GradedSystem> {
    let fields = vec![
        field(&["1", "0", "2*y"], &[1.0]),
        field(&["0", "1", "-2*x"], &[1.0]),
        field(&["0", "0", "1"], &[2.0]),
    ];
    let s = structure(3, &[(0, 1, 2, "-4")]);
    GradedSystem::new(coords(&["x", "y", "t"]), 1, fields, BoxDomain::cube(3, 4.0), Some(s))
}

pub fn heisenberg_two_param() -> Result<GradedSystem> {
    let fields = vec![
        field(&["1", "0", "2*y"], &[1.0, 0.0]),
        field(&["0", "1", "-2*x"], &[1.0, 0.0]),
        field(&["0", "0", "1"], &[2.0, 0.0]),
        field(&["1", "0", "-2*y"], &[0.0, 1.0]),
        field(&["0", "1", "2*x"], &[0.0, 1.0]),
        field(&["0", "0", "1"], &[0.0, 2.0]),
    ];
    let s = structure(6, &[(0, 1, 2, "-4"), (3, 4, 5, "4")]);
    GradedSystem::new(coords(&["x", "y", "t"]), 2, fields, BoxDomain::cube(3, 4.0), Some(s))
}

pub fn grushin() -> Result<GradedSystem> {
    let fields = vec![field(&["1", "0"], &[1.0]), field(&["0", "x"], &[1.0]), field(&["0", "1"], &[2.0])];
    let s = structure(3, &[(0, 1, 2, "1")]);
    GradedSystem::new(coords(&["x", "y"]), 1, fields, BoxDomain::cube(2, 4.0), Some(s))
}

/// Coordinates `(x, s, y, t)`.
pub fn r4_cos_sin() -> Result<GradedSystem> {
    let fields = vec![
        field(&["1", "0", "cos(s)", "0"], &[1.0, 0.0]),
        field(&["0", "1", "0", "cos(x)"], &[0.0, 1.0]),
        field(&["0", "0", "sin(s)", "-sin(x)"], &[1.0, 1.0]),
        field(&["0", "0", "0", "cos(x)"], &[2.0, 1.0]),
        field(&["0", "0", "cos(s)", "0"], &[1.0, 2.0]),
        field(&["0", "0", "0", "sin(x)"], &[3.0, 1.0]),
        field(&["0", "0", "sin(s)", "0"], &[1.0, 3.0]),
    ];
    GradedSystem::new(coords(&["x", "s", "y", "t"]), 2, fields, BoxDomain::cube(4, 4.0), None)
}

pub fn weakly_comparable() -> Result<GradedSystem> {
    let fields = vec![
        field(&["1", "0"], &[1.0, 0.0, 0.0]),
        field(&["0", "exp(-1/x^2)"], &[0.0, 1.0, 0.0]),
        field(&["0", "1"], &[0.0, 0.0, 1.0]),
    ];
    GradedSystem::new(coords(&["x", "y"]), 3, fields, BoxDomain::cube(2, 2.0), None)
}

pub fn control_line() -> Result<GradedSystem> {
    let fields = vec![field(&["1"], &[2.0]), field(&["x^2"], &[1.0])];
    GradedSystem::new(coords(&["x"]), 1, fields, BoxDomain::cube(1, 1.0), None)?.with_candidate(field(&["x"], &[1.5]))
}

pub fn degree_line(a: f64, b: f64, c: f64, d: f64) -> Result<GradedSystem> {
    let fields = vec![field(&["1"], &[a, 0.0]), field(&["1"], &[0.0, b])];
    GradedSystem::new(coords(&["x"]), 2, fields, BoxDomain::cube(1, 1.0), None)?.with_candidate(field(&["1"], &[c, d]))
}

fn args(text: &str) -> Result<(&str, Vec<f64>)> {
    let bad = || GeomError::UnknownBuiltin(text.to_string());
    match text.find('(') {
        None => Ok((text, Vec::new())),
        Some(p) => {
            let inner = text[p + 1..].strip_suffix(')').ok_or_else(bad)?;
            let vals = inner.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            Ok((&text[..p], vals))
        }
    }
}

fn dim_arg(text: &str, v: &[f64]) -> Result<usize> {
    match v {
        [n] if *n >= 1.0 && n.fract() == 0.0 => Ok(*n as usize),
        _ => Err(GeomError::UnknownBuiltin(text.to_string())),
    }
}

/// Looks up a builtin by name, e.g. `heisenberg-left`, `euclidean(3)`,
/// `degree-line(1,1,0.4,0.4)`.
pub fn builtin(name: &str) -> Result<GradedSystem> {
    let name = name.trim();
    let (head, v) = args(name)?;
    let unknown = || GeomError::UnknownBuiltin(name.to_string());
    match (head, v.len()) {
        ("euclidean", 1) => euclidean(dim_arg(name, &v)?),
        ("euclidean-axes", 1) => euclidean_axes(dim_arg(name, &v)?),
        ("euclidean-anisotropic", 0) => euclidean_anisotropic(),
        ("heisenberg-left", 0) => heisenberg_left(),
        ("heisenberg-two-param", 0) => heisenberg_two_param(),
        ("grushin", 0) => grushin(),
        ("r4-cos-sin", 0) => r4_cos_sin(),
        ("weakly-comparable-counterexample", 0) => weakly_comparable(),
        ("control-line", 0) => control_line(),
        ("degree-line", 4) => degree_line(v[0], v[1], v[2], v[3]),
        _ => Err(unknown()),
    }
}

/// Default family split: fields grouped by the index of their single
/// nonzero degree component. Fields with mixed degrees are rejected.
pub fn default_families(sys: &GradedSystem) -> Result<Vec<Vec<usize>>> {
    let mut fam = vec![Vec::new(); sys.nu()];
    for j in 0..sys.q() {
        let nz: Vec<usize> = (0..sys.nu()).filter(|&m| sys.degree(j)[m] != 0.0).collect();
        match nz.as_slice() {
            [m] => fam[*m].push(j),
            _ => {
                return Err(GeomError::InvalidArgument(format!(
                    "field {j} has mixed degree {:?}; pass families explicitly",
                    sys.degree(j)
                )))
            }
        }
    }
    fam.retain(|f| !f.is_empty());
    Ok(fam)
}
