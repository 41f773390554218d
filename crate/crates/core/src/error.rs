use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameter `{name}`: {reason}")]
    InvalidModel { name: &'static str, reason: String },

    #[error("invalid sampling scheme: {0}")]
    InvalidScheme(String),

    #[error("moment order must be positive, got {0}")]
    InvalidOrder(f64),

    #[error("limiting overshoot requires a positive mean, got {0}")]
    NonPositiveMean(f64),

    #[error("limiting overshoot is undefined for lattice increments")]
    LatticeFamily,

    #[error("estimator {0} needs the walk values at sampling times")]
    MissingObservations(&'static str),

    #[error("estimator {0} needs a threshold-crossing trace")]
    NoThreshold(&'static str),

    #[error("estimator {kind} is not valid here: {reason}")]
    UnsupportedEstimator { kind: &'static str, reason: String },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("empty sample")]
    EmptySample,

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("stream id component out of range: {0}")]
    StreamId(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
