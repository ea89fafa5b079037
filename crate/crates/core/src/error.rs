use crate::exprjet::ParseError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: &'static str },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    Spec(String),
    #[error("metric is not positive definite (smallest pivot {smallest_pivot:e})")]
    NotPositiveDefinite { smallest_pivot: f64 },
    #[error("fiber point inside the excluded cone (|y| = {norm:e} < {y_min:e})")]
    ExcludedCone { norm: f64, y_min: f64 },
    #[error("perturbation leaves ker rho at C^{upper}_{{{a}{b}}} (|rho Theta| = {value:e})")]
    RangeCondition { upper: usize, a: usize, b: usize, value: f64 },
    #[error("Newton iteration failed after {iterations} steps (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64, last: Vec<f64> },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("the two Christoffel assemblies disagree by {deviation:e}")]
    AssemblyMismatch { deviation: f64 },
    #[error("degenerate flag (Gram determinant {gram:e})")]
    DegenerateFlag { gram: f64 },
    #[error("point closer than {margin} to the domain boundary")]
    Margin { margin: f64 },
    #[error("point is off the constraint set (residual {residual:e})")]
    OffConstraint { residual: f64 },
    #[error("leaf model: {0}")]
    Leaf(String),
    #[error("{field}: {source}")]
    Field { field: String, source: Box<Error> },
    #[error("gallery has no model named `{0}`")]
    UnknownGallery(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
