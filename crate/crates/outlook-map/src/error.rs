//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, validation, fitting, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// CSV header does not match the expected `f0,...,f{d-1},label` layout.
    #[error("malformed CSV header: {detail}")]
    CsvHeader { detail: String },

    /// A CSV cell failed to parse. Positions are 1-based file coordinates
    /// (the header is line 1).
    #[error("CSV parse error at row {row}, column {col}: {detail}")]
    CsvParse {
        row: usize,
        col: usize,
        detail: String,
    },

    /// A label column value is not a positive integer.
    #[error("label out of range at row {row}: {detail}")]
    LabelOutOfRange { row: usize, detail: String },

    /// A dataset, class list, or sample list that must be non-empty is empty.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A class is absent or too small in one of the outlooks.
    #[error("class {class} has {count} samples in outlook '{outlook}'; at least {required} required")]
    ClassTooSmall {
        outlook: String,
        class: usize,
        count: usize,
        required: usize,
    },

    /// A mixture specification failed validation.
    #[error("invalid mixture spec: {0}")]
    InvalidMixtureSpec(String),

    /// A scalar or structural argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A stored rotation is not orthogonal within tolerance.
    #[error("rotation invariant violated: {0}")]
    RotationInvariant(String),

    /// A mapping was asked to transform a label it was never fitted on.
    #[error("unseen label {label}: mapping covers classes 1..={num_classes}")]
    UnseenLabel { label: usize, num_classes: usize },

    /// The population spectrum does not identify the requested directions.
    #[error("degenerate spectrum for class {class}: {detail}")]
    DegenerateSpectrum { class: usize, detail: String },

    /// An experiment configuration is inconsistent or incomplete.
    #[error("invalid config: {0}")]
    Config(String),

    /// JSON (de)serialization failure.
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// Filesystem failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
