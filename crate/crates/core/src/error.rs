use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("inconsistent constraints: residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    Infeasible { residual: f64, tol: f64 },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("no (w, v) pair exists: {0}")]
    NoPairExists(String),

    #[error("no adversarial parameter exists for this geometry: {0}")]
    ConstructionImpossible(String),

    #[error("perturbation direction not covered by the constraint rows (residual {residual:.3e})")]
    CoverageViolation { residual: f64 },

    #[error("t = {t} lies outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failed: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidInput(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> LabError {
    LabError::DimensionMismatch(msg.into())
}
