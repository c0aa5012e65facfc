//! Deterministic reference training backend: synthetic blobs, a one-hidden-layer
//! tanh classifier with analytic gradients, and SGD with L2.

pub mod data;
pub mod fixtures;
pub mod gradcheck;
pub mod model;
pub mod train;

use thiserror::Error;

pub use data::{make_blobs, make_blobs_around, BlobsSpec, DataModule, DatasetSplit, InMemoryData};
pub use gradcheck::{finite_diff, finite_diff_grad, max_relative_error};
pub use model::{evaluate, loss, loss_and_grad, Evaluation, InitScheme, Params};
pub use train::{first_batch, train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parameter shapes differ: expected {expected}, found {found}")]
    ParamsShape { expected: String, found: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("dataset has no training samples")]
    EmptyDataset,
    #[error("non-finite loss {value} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("decorator failed: {0}")]
    Hook(String),
}

impl BackendError {
    /// Recovers a backend error raised inside a decorated stage; anything else is a hook failure.
    pub(crate) fn from_stage(err: anyhow::Error) -> Self {
        match err.downcast::<BackendError>() {
            Ok(e) => e,
            Err(other) => BackendError::Hook(format!("{other:#}")),
        }
    }
}
