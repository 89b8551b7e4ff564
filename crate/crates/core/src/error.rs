use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Well-formed container with content we do not support or that violates
    /// the declared layout.
    #[error("format error: {0}")]
    Format(String),

    /// Input ended or broke off before a structure was complete.
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("fragment too short: {samples} samples at {sample_rate} Hz is under one second")]
    ShortFragment { samples: usize, sample_rate: u32 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("sample rate mismatch: {expected} Hz vs {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("degenerate reference: {0}")]
    DegenerateReference(String),

    #[error("dependent references: condition number {condition:.3e} exceeds {limit:.0e}")]
    DependentReferences { condition: f64, limit: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("missing metric scores for {} key(s): {}", .missing.len(), .missing.join("; "))]
    Join { missing: Vec<String> },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::DependentReferences { .. }
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Parse { .. } => "parse",
            Error::Range(_) => "range",
            Error::ShortFragment { .. } => "short_fragment",
            Error::Parameter(_) => "parameter",
            Error::SampleRateMismatch { .. } => "sample_rate_mismatch",
            Error::DegenerateReference(_) => "degenerate_reference",
            Error::DependentReferences { .. } => "dependent_references",
            Error::Numerical(_) => "numerical",
            Error::Row { .. } => "row",
            Error::Structural(_) => "structural",
            Error::Join { .. } => "join",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
        }
    }
}
