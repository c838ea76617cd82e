//! Error type shared by every module of the core crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Failures reported by tensor, rotation, solver and network operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not.
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },
    /// A scalar argument is outside its admissible range.
    InvalidArgument { op: &'static str, reason: String },
    /// `backward` was called on a tape that has already been replayed.
    TapeConsumed,
    /// A variable handle does not belong to the tape it was used with.
    UnknownVariable(usize),
    /// Eval-mode forward pass before any batch statistics were recorded.
    UninitializedStatistics { layer: usize },
    /// A class label is outside `[0, num_classes)`.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// Training produced a non-finite loss.
    NonFinite { batch: usize, param_norms: Vec<f64> },
    /// An operation on a dataset that holds no samples.
    EmptyDataset,
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl fmt::Debug, found: impl fmt::Debug) -> Self {
        Error::Dimension {
            op,
            expected: alloc::format!("{expected:?}"),
            found: alloc::format!("{found:?}"),
        }
    }

    pub(crate) fn arg(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, expected, found } => {
                write!(f, "{op}: dimension mismatch, expected {expected}, found {found}")
            }
            Error::InvalidArgument { op, reason } => write!(f, "{op}: {reason}"),
            Error::TapeConsumed => f.write_str("gradient tape has already been consumed"),
            Error::UnknownVariable(id) => write!(f, "variable {id} is not recorded on this tape"),
            Error::UninitializedStatistics { layer } => write!(
                f,
                "batch-norm layer {layer} has no running statistics; train before evaluating"
            ),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} outside [0, {num_classes})")
            }
            Error::NonFinite { batch, param_norms } => {
                write!(f, "non-finite loss at batch {batch}; parameter norms {param_norms:?}")
            }
            Error::EmptyDataset => f.write_str("dataset is empty"),
        }
    }
}

impl core::error::Error for Error {}
