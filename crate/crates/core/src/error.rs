use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid prototype parameters: {0}")]
    InvalidPrototype(String),
    #[error("degenerate N-function: {0}")]
    DegenerateNFunction(String),
    #[error("inverse out of sampled range: {0}")]
    InverseOutOfRange(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cutoff unresolvable on grid: {0}")]
    CutoffUnresolvable(String),
    #[error("cylinder outside domain: {0}")]
    CylinderOutsideDomain(String),
    #[error("monotonicity violated: {0}")]
    MonotonicityViolated(String),
    #[error("family not G-uniform: {0}")]
    FamilyNotUniform(String),
    #[error("invalid delta0: {0}")]
    InvalidDelta0(String),
    #[error("solver did not converge: {reason}; residual history: {history:?}")]
    NonConvergence { reason: String, history: Vec<f64> },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
