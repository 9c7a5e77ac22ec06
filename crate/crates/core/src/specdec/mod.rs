//! Self-speculative generation: draft with a layer-skipping subnetwork of
//! the model, verify with the full model, keep whatever the full model agrees with.

mod engine;
mod metrics;
mod policy;
mod rng;
mod verify;

use thiserror::Error;

pub use engine::{draft_step, generate, DraftToken, GenerationConfig, GenerationOutput};
pub use metrics::{LayerTimesMs, RunMetrics};
pub use policy::DraftExitPolicy;
pub use rng::SessionRng;
pub use verify::{verify_greedy, verify_sampling, VerificationOutcome};

use crate::admg::AdmgError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt plus new tokens need {needed} positions, model holds {capacity}")]
    Capacity { needed: usize, capacity: usize },
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("verification input: {0}")]
    Verify(String),
    #[error("rejected draft at position {position} left an all-zero residual distribution")]
    ZeroResidual { position: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Admg(#[from] AdmgError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
