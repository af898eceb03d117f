use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {0} is a self-loop")]
    SelfLoop(usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("vertex {vertex} out of range 1..={count}")]
    InvalidVertex { vertex: usize, count: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("Schwinger parameter t[{0}] = {1} is not positive")]
    NonPositiveParameter(usize, f64),
    #[error("invalid signature (d={d}, d'={d_prime}): d + d' must be at least 1")]
    InvalidSignature { d: usize, d_prime: usize },
    #[error("decoration of edge {edge} has length {got}, expected {expected}")]
    DecorationLength { edge: usize, got: usize, expected: usize },
    #[error("vertex sets overlap")]
    OverlappingSets,
    #[error("vertex set is empty")]
    EmptySet,
    #[error("vertex {0} violates the stability condition")]
    Unstable(usize),
    #[error("too large for brute force: {0}")]
    TooLarge(String),
    #[error("singular point: {0}")]
    Singular(String),
    #[error("missing substitution for variable {0}")]
    MissingSubstitution(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),
    #[error("coefficient is not polynomial times Gaussian: {0}")]
    NonGaussian(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
