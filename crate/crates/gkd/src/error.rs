use thiserror::Error;

/// Crate-wide error type. Validation errors map to CLI exit code 2,
/// numerical failures to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown initial-condition spec: {0}")]
    UnknownIcSpec(String),

    #[error("sphere projection undefined: ambient norm {norm:.3e} below threshold")]
    ProjectionUndefined { norm: f64 },

    #[error("implicit solve did not converge at t = {time} (last update {update:.3e})")]
    FixedPointDiverged { time: f64, update: f64 },

    #[error("trajectory {m} failed: {source}")]
    TrajectoryFailed {
        m: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite entries in the normal equations")]
    NonFiniteSystem,

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("observation grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty measure: {0}")]
    EmptyMeasure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 for validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ProjectionUndefined { .. }
            | Error::FixedPointDiverged { .. }
            | Error::NonFiniteSystem
            | Error::SolveFailed(_) => 3,
            Error::TrajectoryFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
