use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("zero-norm quaternion is not a valid rotation")]
    ZeroQuaternion,
    #[error("covariance determinant {det:e} is below the singularity threshold {eps:e}")]
    SingularCovariance { det: f64, eps: f64 },
    #[error("expected {expected} color coefficients for degree {degree}, got {actual}")]
    CoefficientLength {
        degree: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported spherical-harmonics degree {0} (max 1)")]
    UnsupportedDegree(usize),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("missing checkpoint section `{0}`")]
    MissingSection(String),
    #[error("decoder architecture hash mismatch: stored {stored:016x}, expected {expected:016x}")]
    ArchitectureMismatch { stored: u64, expected: u64 },
    #[error("skinning weight row {row} is not row-stochastic (sum {sum}, min {min})")]
    NonStochasticWeights { row: usize, sum: f64, min: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("correspondence mismatch: {0}")]
    Correspondence(String),
    #[error("head joint is behind the camera (depth {0})")]
    HeadBehindCamera(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SplatError> = std::result::Result<T, E>;
