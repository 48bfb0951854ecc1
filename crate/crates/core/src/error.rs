use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the library. The CLI maps every variant
/// to a nonzero exit code; the FFI crate maps them to stable integer codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid sparse vector: {0}")]
    InvalidSparse(String),

    #[error("invalid label {0}; labels must be 0 or 1")]
    InvalidLabel(i64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contracting rate {0} outside (0, 1]")]
    InvalidRate(f64),

    #[error("non-finite model weights after iteration {iteration}")]
    NonFinite { iteration: u64 },

    #[error("dataset of {samples} samples cannot be split across {nodes} nodes")]
    DatasetTooSmall { samples: usize, nodes: usize },

    #[error("node {node} has delay {delay}; balanced SimuParallel SGD requires zero delays")]
    NonZeroDelay { node: usize, delay: u64 },

    #[error("node {node} has delay {delay} >= fastest-node budget {iterations}; it would train no steps")]
    DelayExceedsBudget {
        node: usize,
        delay: u64,
        iterations: u64,
    },

    #[error("averaging span {span} is invalid for {iterations} iterations: {reason}")]
    InvalidSpan {
        span: u64,
        iterations: u64,
        reason: &'static str,
    },

    #[error("node {node} would perform zero steps in averaging round {round}")]
    EmptyRound { node: usize, round: u64 },

    #[error("check rate {rate} >= 1 leaves no bracketing interval; reduce the step size")]
    DegenerateCheckRate { rate: f64 },

    #[error("sample vector is zero")]
    ZeroSample,

    #[error("history of {0} models is too short; at least 3 are required")]
    ShortHistory(usize),

    #[error("step size violates the delayed-update contraction condition: {lhs} > {rhs}")]
    StepSizeInvalid { lhs: f64, rhs: f64 },

    #[error("server {server} found no admissible sample at accepted iteration {iteration} after {attempts} consecutive rejections")]
    NoAdmissibleSample {
        server: usize,
        iteration: u64,
        attempts: usize,
        last_reason: String,
    },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("fitted contracting rate {0} is not below 1; curve is not decreasing")]
    NotContracting(f64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
