//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter vector was used with a function expecting a different layout.
    #[error("parameter layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: String, found: String },

    /// An input vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// A class label fell outside the head's class count.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("batch must be non-empty")]
    EmptyBatch,

    #[error("dataset must be non-empty")]
    EmptyDataset,

    #[error("requested batch of {requested} from dataset of {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate index {index} in selection")]
    DuplicateIndex { index: usize },

    /// The exact Hessian-vector backend met a trace node lacking a
    /// registered second-derivative rule.
    #[error("operation `{op}` has no registered second derivative; use the finite-difference backend")]
    UnsupportedSecondOrder { op: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: PathBuf, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Wraps an error with the experiment phase it occurred in.
    #[error("phase `{phase}`: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tags `self` with the experiment phase that produced it.
    pub fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}

/// Extension adding phase tags to results.
pub trait PhaseExt<T> {
    fn in_phase(self, phase: &'static str) -> Result<T>;
}

impl<T> PhaseExt<T> for Result<T> {
    fn in_phase(self, phase: &'static str) -> Result<T> {
        self.map_err(|e| e.in_phase(phase))
    }
}
