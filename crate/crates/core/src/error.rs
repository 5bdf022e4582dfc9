//! Error types shared across the crate.

use thiserror::Error;

/// Fatal ingestion failures. Per-row problems are reported as
/// [`crate::tickstore::RowDiagnostic`]s instead and never abort a parse.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid format spec: {0}")]
    Format(String),
}

/// An aggregate was requested over an empty event set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("operation requires a nonempty event set")]
pub struct EmptyEventSet;

/// Criterion or threshold parameters failed validation.
#[derive(Debug, Error)]
#[error("invalid parameter: {0}")]
pub struct InvalidParameter(pub String);

/// A quote-jump computation could not run for an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QuoteCoverageError {
    /// Fewer than two quote updates fall in the event window.
    #[error("fewer than two in-window quote updates (found {found})")]
    InsufficientQuotes { found: usize },
    /// No quote stream exists for the event's key.
    #[error("no quote stream for event key")]
    MissingStream,
}

/// Synthetic-data generation failures.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("background still contains qualifying events after {retries} retries")]
    EventfulBackground { retries: u32 },
    #[error("injection at second {second} overlaps an existing injection")]
    OverlappingInjection { second: u32 },
    #[error("invalid injection spec: {0}")]
    InvalidSpec(String),
    #[error("assembled stream disagrees with designed ground truth: {0}")]
    GroundTruthMismatch(String),
}

/// A cross-table counting identity failed; indicates an upstream bug.
#[derive(Debug, Error)]
#[error("counting identity violated: {0}")]
pub struct IdentityViolation(pub String);
