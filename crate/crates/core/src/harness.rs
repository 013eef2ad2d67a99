//! End-to-end experiment driver: synthetic tasks and TSV ingestion, metrics,
//! the regularized training loop, multi-seed sweeps, generalization-gap and
//! subsampling studies, surrogate pre-training, and persistence.

use thiserror::Error;

pub mod config;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod pretrain;
pub mod sweep;
pub mod train;

/// Harness-level failure, classified for process exit codes: validation
/// problems exit 1, numerical aborts exit 2.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("numerical abort at step {step}: {detail}")]
    Numerical { step: u64, detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn validation(msg: impl Into<String>) -> Self {
        HarnessError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Numerical { .. } => 2,
            _ => 1,
        }
    }
}

impl From<crate::encoder::EncoderError> for HarnessError {
    fn from(e: crate::encoder::EncoderError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<crate::tape::TapeError> for HarnessError {
    fn from(e: crate::tape::TapeError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<crate::regularizers::RegularizerError> for HarnessError {
    fn from(e: crate::regularizers::RegularizerError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<crate::probe::ProbeError> for HarnessError {
    fn from(e: crate::probe::ProbeError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<crate::theory::TheoryError> for HarnessError {
    fn from(e: crate::theory::TheoryError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}
