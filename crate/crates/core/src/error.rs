use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("near-singular Hessian (smallest eigenvalue {min_eigenvalue:e}); full-support assumption violated")]
    NearSingularHessian { min_eigenvalue: f64 },

    #[error("distribution lacks full support: entry {index} = {value:e}")]
    MissingSupport { index: usize, value: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("regularization eta must be {0}")]
    InvalidEta(&'static str),

    #[error("trace schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
