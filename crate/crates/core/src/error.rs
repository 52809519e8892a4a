use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ASU out of range: {0} (expected 0..=31)")]
    AsuOutOfRange(i64),

    #[error("scan has {0} readings (expected 1..=7)")]
    ReadingCount(usize),

    #[error("duplicate tower {0} within one scan")]
    DuplicateTower(String),

    #[error("empty tower id")]
    EmptyTowerId,

    #[error("unknown tower {0}")]
    UnknownTower(String),

    #[error("no locations")]
    NoLocations,

    #[error("location {loc} has inconsistent coordinates")]
    InconsistentLocation { loc: u32 },

    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("zero-variance samples, use a degenerate fit")]
    ZeroVariance,

    #[error("non-positive sample {0}")]
    NonPositiveSample(f64),

    #[error("sample {0} outside the unit interval")]
    OutsideUnitInterval(f64),

    #[error("{solver} did not converge after {iterations} iterations (score norm {score})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        score: f64,
    },

    #[error("missing distribution fit for tower index {tower} at location {loc}")]
    MissingFit { loc: u32, tower: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch} (loss trace has {} entries)", trace.len())]
    Divergence { epoch: usize, trace: Vec<f64> },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training data contains a single class")]
    SingleClass,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::AsuOutOfRange(_)
                | Error::ReadingCount(_)
                | Error::DuplicateTower(_)
                | Error::EmptyTowerId
                | Error::NoLocations
                | Error::InconsistentLocation { .. }
        )
    }
}
