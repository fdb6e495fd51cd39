use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} out of range (must be 1..={max})", max = crate::operator::MAX_DIM)]
    InvalidDimension(usize),

    #[error("expected {expected} entries for a {dim}x{dim} operator, found {found}")]
    EntryCount {
        dim: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0}: non-finite entry")]
    NonFinite(&'static str),

    #[error("{what} is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { what: String, deviation: f64 },

    #[error("not a density matrix: {0}")]
    NotDensity(String),

    #[error("trace is zero after clamping negative eigenvalues")]
    ZeroTrace,

    #[error("nonpositive trace {0:e}")]
    NonPositiveTrace(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("jump requested with rate trace {rate:e} at or below the floor")]
    ImpossibleJump { rate: f64 },

    #[error("jump probability {probability} exceeds 1; reduce dt")]
    RateTooLarge { probability: f64 },

    #[error("non-finite observation increment {0}")]
    BadIncrement(f64),

    #[error("detection mismatch: model uses {model}, record uses {record}")]
    DetectionMismatch {
        model: crate::operator::Detection,
        record: crate::operator::Detection,
    },

    #[error("the linear filter supports homodyne records only")]
    LinearRequiresHomodyne,

    #[error("length mismatch: expected {expected} steps, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("{diverged} of {total} trajectories diverged (more than 0.1%)")]
    TooManyDiverged { diverged: usize, total: usize },

    #[error("grid mismatch between trajectories")]
    GridMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, with step annotations peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}
