use thiserror::Error;

/// Errors produced by the numerical core and the dataset layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Cholesky factorization failed for every jitter level (largest tried: {max_jitter:e})")]
    FactorizationFailed { max_jitter: f64 },

    #[error("matrix is rank deficient: |R[{index},{index}]| = {value:e}")]
    RankDeficient { index: usize, value: f64 },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("both the low-rank likelihood and the pseudoloss failed: {0}")]
    Unrecoverable(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("problem size {size} exceeds the dense oracle limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("unknown test function `{0}`")]
    UnknownFunction(String),

    #[error("point lies outside the domain of `{name}` in coordinate {coord}")]
    DomainViolation { name: String, coord: usize },

    #[error("input dimension {dim} is constant on the training set")]
    DegenerateDimension { dim: usize },

    #[error("malformed dataset at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported archive version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("grid evaluation needs a two-dimensional model, got d = {0}")]
    DimensionUnsupported(usize),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("archive encoding: {0}")]
    Archive(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures that come from the linear algebra rather than from inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FactorizationFailed { .. }
                | Error::RankDeficient { .. }
                | Error::NotConverged { .. }
                | Error::Unrecoverable(_)
        )
    }
}
