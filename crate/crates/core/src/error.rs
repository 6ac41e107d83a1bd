use thiserror::Error;

/// Errors raised by the numerical core (basis, activation, network, loss,
/// backprop, optim).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VnnError {
    #[error("basis index {index} out of range for cut-off {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("classic basis supports at most 4 members, got {0}")]
    ClassicTooLarge(usize),

    #[error("invalid basis family: {0}")]
    InvalidFamily(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {stage} at layer {layer}")]
    NonFinite { stage: &'static str, layer: usize },

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

pub type Result<T> = std::result::Result<T, VnnError>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(VnnError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
