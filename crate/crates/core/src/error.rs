//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by analysis operations, file ingestion and the pipeline
/// driver.
///
/// The leading token of each message (`empty-set`, `ragged-rows`, ...) is a
/// stable identifier; callers and the CLI match on the variant, humans read
/// the rest.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-set: {context} requires at least one point")]
    EmptySet { context: &'static str },

    #[error("dimension-exceeds-ambient: requested dimension {d} exceeds ambient dimension {ambient}")]
    DimensionExceedsAmbient { d: usize, ambient: usize },

    #[error("k-exceeds-cloud: k = {k} but the cloud has only {n} points")]
    KExceedsCloud { k: usize, n: usize },

    #[error("degenerate-diameter: the cloud has zero coordinate extent")]
    DegenerateDiameter,

    #[error("k-exceeds-neighborhood: k = {k} must be smaller than the member count {n}")]
    KExceedsNeighborhood { k: usize, n: usize },

    #[error("gmst-fit-failed: {reason}; edge-length trace {trace:?}")]
    GmstFitFailed { reason: String, trace: Vec<f64> },

    #[error("empty-stratum: stratum of dimension {dim} has no points")]
    EmptyStratum { dim: usize },

    #[error("stratum-too-small: {n} points leave a training side below the minimum leaf size {min_leaf} at test fraction {fraction}")]
    StratumTooSmall { n: usize, min_leaf: usize, fraction: f64 },

    #[error("insufficient-runs: {runs} resampling runs, need at least 2")]
    InsufficientRuns { runs: usize },

    #[error("ragged-rows: line {line}: expected {expected} columns, found {found}")]
    RaggedRows { line: usize, expected: usize, found: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stratum {dim}: {source}")]
    Stratum {
        dim: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the stratum it occurred in, as the pipeline does
    /// when a per-stratum step fails.
    pub fn in_stratum(self, dim: usize) -> Self {
        Error::Stratum {
            dim,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
