//! Autoregressive rollout, the flow-matching Euler sampler, and the nRMSE
//! evaluation harness with machine-readable reports.

mod evaluate;
mod nrmse;
mod rollout;
mod sampler;

pub use evaluate::{evaluate_dataset, evaluate_suite, EvalReport, EvalReportRow, EvalSpec};
pub use nrmse::{nrmse, nrmse_pair};
pub use rollout::{rollout, NetworkModel, RolloutResult, SolverOracleModel, StepModel};
pub use sampler::{euler_integrate, euler_sample, SamplerConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Fields(#[from] crate::fields::FieldsError),
    #[error(transparent)]
    Solver(#[from] crate::spectral::SolverError),
    #[error("reference item {index} is identically zero; nRMSE undefined")]
    ZeroReference { index: usize },
    #[error("shape mismatch: prediction {pred:?} vs reference {reference:?}")]
    Shape {
        pred: Vec<usize>,
        reference: Vec<usize>,
    },
    #[error("rollout needs a model prediction but got non-finite values at step {0}")]
    NonFinite(usize),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
