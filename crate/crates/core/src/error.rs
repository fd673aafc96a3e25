use std::io;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {value} is not divisible by {divisor}")]
    Divisibility {
        op: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("no row of the curve map exceeds threshold {threshold}")]
    EmptyCurve { threshold: f64 },

    #[error("{samples} samples cannot determine a degree-{degree} polynomial")]
    Underdetermined { samples: usize, degree: usize },

    #[error("biplanar z-ranges overlap by {overlap:.4}, need at least {required:.2}")]
    InsufficientOverlap { overlap: f64, required: f64 },

    #[error("angle must be non-negative, got {0}")]
    NegativeAngle(f64),

    #[error("training set is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
