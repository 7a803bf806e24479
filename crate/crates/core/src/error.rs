use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid shape for {op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("variable belongs to a different tape")]
    ForeignTape,

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("gradient set does not match parameters: missing [{missing}], unexpected [{extra}]")]
    GradientKeys { missing: String, extra: String },

    #[error("image pool expects shape {expected}, got {got}")]
    PoolShape { expected: Shape, got: Shape },

    #[error("value out of range for {op}: {value} (allowed {lo}..={hi})")]
    OutOfRange {
        op: &'static str,
        value: f32,
        lo: f32,
        hi: f32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}: cannot encode image: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite {loss} at iteration {iteration}: {value}")]
    NonFinite {
        iteration: usize,
        loss: &'static str,
        value: f32,
    },
}

impl Error {
    /// Stable snake_case tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ForeignTape => "foreign_tape",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::GradientKeys { .. } => "gradient_keys",
            Error::PoolShape { .. } => "pool_shape",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::Encode { .. } => "encode",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "non_finite",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
