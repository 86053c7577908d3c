use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error kinds raised across the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no data rows")]
    NoData,
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column} ({name}): cannot parse {value:?} as a number")]
    ParseCell {
        row: usize,
        column: usize,
        name: String,
        value: String,
    },
    #[error("row {row}, column {column}: value is not finite")]
    NonFiniteCell { row: usize, column: usize },
    #[error("series shorter than window (T = {len}, L = {window})")]
    SeriesTooShort { len: usize, window: usize },
    #[error("signal too short for decomposition (length {0})")]
    SignalTooShort(usize),
    #[error("{levels} decomposition levels exceed the maximum {max} for length {len}")]
    TooManyLevels {
        levels: usize,
        max: usize,
        len: usize,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid anomaly spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least {needed} values, got {found}")]
    TooFewValues { needed: usize, found: usize },
    #[error("centroid undefined: empty class")]
    CentroidUndefined,
    #[error("calibration requires both classes")]
    SingleClass,
    #[error("metrics undefined: ground truth has a single class")]
    MetricsUndefined,
    #[error("action {action:?} is not valid in {mode:?} mode")]
    ModeMismatch {
        mode: crate::calibration::ActionMode,
        action: crate::calibration::Action,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error signals numerical divergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }

    /// True when the error stems from configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidSpec(_) | Error::TooManyLevels { .. }
        )
    }
}
