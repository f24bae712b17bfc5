//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    /// A signal row with near-zero power cannot be scaled to unit average
    /// power; a collapsed encoder output is surfaced instead of rescaled.
    #[error("degenerate signal: row {row} has norm below {threshold:e}")]
    DegenerateSignal { row: usize, threshold: f64 },

    #[error("bad magic number in {path}: found {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("dimension mismatch in {path}: {detail}")]
    DataDimension { path: String, detail: String },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: String, detail: String },

    #[error("unsupported format version {found}, this build reads version {supported}")]
    FormatVersion { found: u32, supported: u32 },

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("training diverged in round {round}, {phase} phase, epoch {epoch}: {detail}")]
    TrainingDiverged {
        round: usize,
        phase: &'static str,
        epoch: usize,
        detail: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
