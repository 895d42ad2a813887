//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A series, window set, or buffer was shorter than the operation needs.
    #[error("input too short: {0}")]
    InputTooShort(String),

    /// A configuration field failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Training produced a non-finite loss. Carries the 1-based epoch.
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// The detector saw a non-finite prediction or score at stream index `t`.
    #[error("detection diverged: non-finite value at stream index {t}")]
    StreamDiverged { t: usize },

    /// CSV header did not match the expected schema.
    #[error("schema mismatch in column {position}: expected {expected:?}, found {found:?}")]
    SchemaMismatch {
        position: usize,
        expected: String,
        found: String,
    },

    /// A CSV data row could not be parsed. Rows are 1-based, header excluded.
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    /// Timestamps must be strictly increasing.
    #[error("non-monotonic timestamp at row {row}")]
    NonMonotonicTimestamp { row: usize },

    /// An injected event range overlaps an existing labeled event.
    #[error("event [{start}, {end}] overlaps an existing labeled event")]
    EventOverlap { start: usize, end: usize },

    /// An index or range fell outside the series.
    #[error("range out of bounds: {0}")]
    OutOfBounds(String),

    /// Every trial of a tuning run failed; there is no best configuration.
    #[error("tuning failed: no trial completed")]
    NoCompletedTrial,

    /// Model file could not be understood.
    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
