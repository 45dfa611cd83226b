use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the stage that produces them so the CLI can map
/// them onto its exit-code contract (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: expected a {expected}-axis tensor, got shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },

    #[error("shape {shape:?} holds {expected} elements but {found} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("maxpool2 needs even height and width, got {height}x{width}; pad or resize the input")]
    OddSpatial { height: usize, width: usize },

    #[error("{0}")]
    Contract(String),

    #[error("layer {layer} ({name}): {source}")]
    Layer {
        layer: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("input size {height}x{width} is not divisible by {required}")]
    Divisibility {
        height: usize,
        width: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),

    #[error("sample `{id}` has no {kind} mask (looked in {dir})")]
    MissingCounterpart {
        id: String,
        kind: &'static str,
        dir: PathBuf,
    },

    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },

    #[error("sample `{id}`: {what} is {found_h}x{found_w} but the scan is {scan_h}x{scan_w}")]
    SampleDims {
        id: String,
        what: &'static str,
        found_h: usize,
        found_w: usize,
        scan_h: usize,
        scan_w: usize,
    },

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NumericAbort { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Divisibility { .. } => ErrorCategory::Config,
            Error::EmptyDataset(_)
            | Error::MissingDirectory(_)
            | Error::MissingCounterpart { .. }
            | Error::Unreadable { .. }
            | Error::SampleDims { .. }
            | Error::Io(_)
            | Error::Checkpoint(_)
            | Error::CheckpointShape { .. } => ErrorCategory::Data,
            Error::Layer { source, .. } => source.category(),
            _ => ErrorCategory::Numeric,
        }
    }

    pub(crate) fn in_layer(self, layer: usize, name: &str) -> Error {
        Error::Layer {
            layer,
            name: name.to_string(),
            source: Box::new(self),
        }
    }
}
