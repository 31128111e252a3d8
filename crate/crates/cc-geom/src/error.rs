use cc_expr::ExprError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("structure coefficients fail the integrability check (residual {residual:.3e} at {point:?})")]
    StructureResidual { residual: f64, point: Vec<f64> },
    #[error("dimension {0} exceeds the supported maximum of 12")]
    TooLarge(usize),
    #[error("point {0:?} lies outside the domain box")]
    OutsideDomain(Vec<f64>),
    #[error("not integrable at {point:?} (residual {residual:.3e})")]
    NotIntegrable { residual: f64, point: Vec<f64> },
    #[error("all scaled columns vanish at this point")]
    ZeroColumns,
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("trajectory left the domain")]
    LeftDomain,
    #[error("chart radius too large (det ratio {ratio:.3e} below {floor:.3e})")]
    ChartRadiusTooLarge { ratio: f64, floor: f64 },
    #[error("no admissible chart radius found down to {0:.3e}")]
    NoAdmissibleRadius(f64),
    #[error("structure equation iteration is not contracting (update ratio {0:.3})")]
    NonContraction(f64),
    #[error("structure equation did not converge in {0} iterations")]
    MaxIterations(usize),
    #[error("degenerate leading minor")]
    DegenerateMinor,
    #[error("families do not generate a common leaf")]
    LeafMismatch,
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
