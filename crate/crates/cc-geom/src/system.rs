//! Graded vector-field systems and their JSON form.

use cc_expr::{differentiate, parse, Expr, Program};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::linalg;
use crate::rng::task_rng;

pub const MAX_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub coeffs: Vec<String>,
    pub degree: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Serialized system definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub nu: usize,
    pub coords: Vec<String>,
    pub fields: Vec<FieldSpec>,
    pub domain: DomainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<Vec<Vec<Vec<String>>>>,
    /// Candidate field for control checks; not part of the system proper.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedField {
    pub coeffs: Vec<Expr>,
    pub degree: Vec<f64>,
}

impl GradedField {
    pub fn parse(coeffs: &[&str], degree: &[f64]) -> Result<GradedField> {
        let coeffs = coeffs.iter().map(|c| parse(c)).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(GradedField { coeffs, degree: degree.to_vec() })
    }

    fn to_spec(&self) -> FieldSpec {
        FieldSpec { coeffs: self.coeffs.iter().map(|e| e.to_string()).collect(), degree: self.degree.clone() }
    }

    fn from_spec(s: &FieldSpec) -> Result<GradedField> {
        let refs: Vec<&str> = s.coeffs.iter().map(String::as_str).collect();
        GradedField::parse(&refs, &s.degree)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BoxDomain {
    pub fn cube(n: usize, half: f64) -> BoxDomain {
        BoxDomain { min: vec![-half; n], max: vec![half; n] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.min.iter().zip(&self.max)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[derive(Debug, Clone)]
struct Compiled {
    coeffs: Vec<Program>,
    jac: Vec<Vec<Program>>,
}

impl Compiled {
    fn new(f: &GradedField, coords: &[String]) -> Result<Compiled> {
        let coeffs = f.coeffs.iter().map(|e| Program::compile(e, coords)).collect::<std::result::Result<Vec<_>, _>>()?;
        let jac = f
            .coeffs
            .iter()
            .map(|e| coords.iter().map(|c| Program::compile(&differentiate(e, c), coords)).collect())
            .collect::<std::result::Result<Vec<Vec<_>>, _>>()?;
        Ok(Compiled { coeffs, jac })
    }
}

/// `q` vector fields on a box in `R^n`, each carrying a `nu`-component formal degree.
#[derive(Debug, Clone)]
pub struct GradedSystem {
    n: usize,
    nu: usize,
    coords: Vec<String>,
    fields: Vec<GradedField>,
    domain: BoxDomain,
    structure: Option<Vec<Vec<Vec<Expr>>>>,
    candidate: Option<GradedField>,
    compiled: Vec<Compiled>,
    brackets: Vec<Vec<Program>>,
    structure_progs: Option<Vec<Vec<Vec<Program>>>>,
}

fn pair_index(i: usize, j: usize, q: usize) -> usize {
    debug_assert!(i < j && j < q);
    i * q - i * (i + 1) / 2 + (j - i - 1)
}

/// Evaluates `p` at `x`, replacing a non-finite value by the average over
/// nearby points. Handles removable singularities such as the derivatives of
/// `exp(-1/x^2)` at `x = 0`.
fn eval_regular(p: &Program, x: &[f64]) -> f64 {
    let v = p.eval(x);
    if v.is_finite() {
        return v;
    }
    let mut y = x.to_vec();
    let mut acc = 0.0;
    let mut cnt = 0;
    for k in 0..x.len() {
        let h = 1e-7 * (1.0 + x[k].abs());
        for s in [h, -h] {
            y[k] = x[k] + s;
            let w = p.eval(&y);
            if w.is_finite() {
                acc += w;
                cnt += 1;
            }
        }
        y[k] = x[k];
    }
    if cnt == 0 {
        v
    } else {
        acc / cnt as f64
    }
}

/// Symbolic commutator `[X, Y]` in the given coordinates.
pub fn commutator(x: &[Expr], y: &[Expr], coords: &[String]) -> Vec<Expr> {
    (0..x.len())
        .map(|l| {
            let mut acc = Expr::Const(0.0);
            for (k, c) in coords.iter().enumerate() {
                acc = Expr::add(acc, Expr::mul(x[k].clone(), differentiate(&y[l], c)));
                acc = Expr::sub(acc, Expr::mul(y[k].clone(), differentiate(&x[l], c)));
            }
            acc
        })
        .collect()
}

impl GradedSystem {
    pub fn new(
        coords: Vec<String>,
        nu: usize,
        fields: Vec<GradedField>,
        domain: BoxDomain,
        structure: Option<Vec<Vec<Vec<Expr>>>>,
    ) -> Result<GradedSystem> {
        Self::build(coords, nu, fields, domain, structure, None, true)
    }

    fn build(
        coords: Vec<String>,
        nu: usize,
        fields: Vec<GradedField>,
        domain: BoxDomain,
        structure: Option<Vec<Vec<Vec<Expr>>>>,
        candidate: Option<GradedField>,
        strict_degrees: bool,
    ) -> Result<GradedSystem> {
        let n = coords.len();
        let q = fields.len();
        if n == 0 || q == 0 || nu == 0 {
            return Err(GeomError::InvalidSystem("n, q and nu must be positive".into()));
        }
        if n > MAX_DIM {
            return Err(GeomError::TooLarge(n));
        }
        if q > MAX_DIM {
            return Err(GeomError::TooLarge(q));
        }
        if domain.min.len() != n || domain.max.len() != n || domain.min.iter().zip(&domain.max).any(|(a, b)| !(a < b)) {
            return Err(GeomError::InvalidSystem("domain box must have n increasing intervals".into()));
        }
        for (j, f) in fields.iter().chain(candidate.iter()).enumerate() {
            if f.coeffs.len() != n {
                return Err(GeomError::InvalidSystem(format!("field {j} has {} components, expected {n}", f.coeffs.len())));
            }
            if f.degree.len() != nu || f.degree.iter().any(|d| !d.is_finite() || *d < 0.0) {
                return Err(GeomError::InvalidSystem(format!("field {j} needs {nu} non-negative degree components")));
            }
        }
        if strict_degrees {
            if let Some(j) = fields.iter().position(|f| f.degree.iter().all(|d| *d == 0.0)) {
                return Err(GeomError::InvalidSystem(format!("field {j} has an all-zero degree")));
            }
        }
        let compiled = fields.iter().map(|f| Compiled::new(f, &coords)).collect::<Result<Vec<_>>>()?;
        let mut brackets = Vec::with_capacity(q * (q.saturating_sub(1)) / 2);
        for i in 0..q {
            for j in i + 1..q {
                let b = commutator(&fields[i].coeffs, &fields[j].coeffs, &coords);
                brackets.push(b.iter().map(|e| Program::compile(e, &coords)).collect::<std::result::Result<Vec<_>, _>>()?);
            }
        }
        let structure_progs = match &structure {
            None => None,
            Some(s) => {
                if s.len() != q || s.iter().any(|r| r.len() != q || r.iter().any(|c| c.len() != q)) {
                    return Err(GeomError::InvalidSystem("structure must be a q x q x q array".into()));
                }
                Some(
                    s.iter()
                        .map(|r| {
                            r.iter()
                                .map(|c| c.iter().map(|e| Program::compile(e, &coords)).collect::<std::result::Result<Vec<_>, _>>())
                                .collect::<std::result::Result<Vec<_>, _>>()
                        })
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                )
            }
        };
        let sys = GradedSystem { n, nu, coords, fields, domain, structure, candidate, compiled, brackets, structure_progs };
        if sys.structure.is_some() {
            sys.check_structure(100, 1e-8)?;
        }
        Ok(sys)
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<GradedSystem> {
        if spec.coords.len() != spec.n {
            return Err(GeomError::InvalidSystem(format!("{} coordinate names for n = {}", spec.coords.len(), spec.n)));
        }
        let fields = spec.fields.iter().map(GradedField::from_spec).collect::<Result<Vec<_>>>()?;
        let structure = match &spec.structure {
            None => None,
            Some(s) => Some(
                s.iter()
                    .map(|r| r.iter().map(|c| c.iter().map(|e| parse(e).map_err(GeomError::from)).collect()).collect())
                    .collect::<Result<Vec<Vec<Vec<Expr>>>>>()?,
            ),
        };
        let candidate = spec.candidate.as_ref().map(GradedField::from_spec).transpose()?;
        let domain = BoxDomain { min: spec.domain.min.clone(), max: spec.domain.max.clone() };
        Self::build(spec.coords.clone(), spec.nu, fields, domain, structure, candidate, true)
    }

    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            n: self.n,
            nu: self.nu,
            coords: self.coords.clone(),
            fields: self.fields.iter().map(GradedField::to_spec).collect(),
            domain: DomainSpec { min: self.domain.min.clone(), max: self.domain.max.clone() },
            structure: self
                .structure
                .as_ref()
                .map(|s| s.iter().map(|r| r.iter().map(|c| c.iter().map(|e| e.to_string()).collect()).collect()).collect()),
            candidate: self.candidate.as_ref().map(GradedField::to_spec),
        }
    }

    pub fn from_json(text: &str) -> Result<GradedSystem> {
        let spec: SystemSpec = serde_json::from_str(text).map_err(|e| GeomError::InvalidSystem(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("spec serializes")
    }

    pub fn with_candidate(mut self, candidate: GradedField) -> Result<GradedSystem> {
        if candidate.coeffs.len() != self.n || candidate.degree.len() != self.nu {
            return Err(GeomError::InvalidSystem("candidate shape does not match the system".into()));
        }
        self.candidate = Some(candidate);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.fields.len()
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn fields(&self) -> &[GradedField] {
        &self.fields
    }

    pub fn degree(&self, j: usize) -> &[f64] {
        &self.fields[j].degree
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn candidate(&self) -> Option<&GradedField> {
        self.candidate.as_ref()
    }

    pub fn has_structure(&self) -> bool {
        self.structure.is_some()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.domain.contains(x)
    }

    /// The system restricted to the fields `idx`, in that order. Declared structure is dropped.
    pub fn subsystem(&self, idx: &[usize]) -> Result<GradedSystem> {
        let fields = idx.iter().map(|&j| self.fields[j].clone()).collect();
        Self::build(self.coords.clone(), self.nu, fields, self.domain.clone(), None, None, false)
    }

    /// The system with its candidate appended as the last field.
    pub fn augmented(&self) -> Result<GradedSystem> {
        let c = self.candidate.clone().ok_or_else(|| GeomError::InvalidArgument("system has no candidate field".into()))?;
        let mut fields = self.fields.clone();
        fields.push(c);
        Self::build(self.coords.clone(), self.nu, fields, self.domain.clone(), None, None, false)
    }

    /// System with the same fields and every degree replaced by `degrees[j]`.
    pub fn regraded(&self, nu: usize, degrees: &[Vec<f64>]) -> Result<GradedSystem> {
        let fields = self
            .fields
            .iter()
            .zip(degrees)
            .map(|(f, d)| GradedField { coeffs: f.coeffs.clone(), degree: d.clone() })
            .collect();
        Self::build(self.coords.clone(), nu, fields, self.domain.clone(), None, None, false)
    }

    pub fn eval_field_into(&self, j: usize, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.compiled[j].coeffs) {
            *o = eval_regular(p, x);
        }
    }

    pub fn eval_field(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_field_into(j, x, &mut out);
        out
    }

    /// `out[(l, k)] += s * d_k X_j^l (x)`.
    pub fn add_field_jacobian(&self, j: usize, x: &[f64], s: f64, out: &mut DMatrix<f64>) {
        for (l, row) in self.compiled[j].jac.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                if !p.is_zero() {
                    out[(l, k)] += s * eval_regular(p, x);
                }
            }
        }
    }

    /// The `n x q` matrix of unscaled fields at `x`.
    pub fn field_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.q());
        for j in 0..self.q() {
            for (l, p) in self.compiled[j].coeffs.iter().enumerate() {
                m[(l, j)] = eval_regular(p, x);
            }
        }
        m
    }

    /// `[X_i, X_j](x)`, numerically evaluated from the symbolic bracket.
    pub fn bracket_at(&self, i: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let q = self.q();
        if i == j {
            return vec![0.0; self.n];
        }
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        self.brackets[pair_index(a, b, q)].iter().map(|p| sign * eval_regular(p, x)).collect()
    }

    pub fn bracket_exprs(&self, i: usize, j: usize) -> Vec<Expr> {
        commutator(&self.fields[i].coeffs, &self.fields[j].coeffs, &self.coords)
    }

    /// Coefficients `c_{i,j}^k(x)` with `[X_i, X_j](x) = sum_k c^k X_k(x)`.
    ///
    /// Declared structure expressions are used when present; otherwise the
    /// minimum-norm least-squares solution. Fails if the bracket leaves the span
    /// by more than `tol` (relative to the bracket size, floored at 1).
    pub fn structure_coefficients_at(&self, i: usize, j: usize, x: &[f64], tol: f64) -> Result<Vec<f64>> {
        let b = DVector::from_vec(self.bracket_at(i, j, x));
        let m = self.field_matrix(x);
        let c = match &self.structure_progs {
            Some(s) => DVector::from_iterator(self.q(), s[i][j].iter().map(|p| p.eval(x))),
            None => linalg::lstsq(&m, &b, linalg::RANK_TOL),
        };
        let residual = (&m * &c - &b).norm();
        if residual > tol * b.norm().max(1.0) {
            return Err(GeomError::NotIntegrable { residual, point: x.to_vec() });
        }
        Ok(c.iter().copied().collect())
    }

    fn check_structure(&self, samples: usize, tol: f64) -> Result<()> {
        let s = self.structure_progs.as_ref().expect("structure present");
        let mut rng = task_rng(0x5eed, 0);
        let q = self.q();
        for _ in 0..samples {
            let x: Vec<f64> = (0..self.n).map(|l| rng.random_range(self.domain.min[l]..=self.domain.max[l])).collect();
            let m = self.field_matrix(&x);
            for i in 0..q {
                for j in 0..q {
                    let b = DVector::from_vec(self.bracket_at(i, j, &x));
                    let c = DVector::from_iterator(q, s[i][j].iter().map(|p| p.eval(&x)));
                    let residual = (&m * &c - &b).norm();
                    if !(residual <= tol * (1.0 + b.norm())) {
                        return Err(GeomError::StructureResidual { residual, point: x });
                    }
                }
            }
        }
        Ok(())
    }
}
