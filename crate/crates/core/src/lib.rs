//! A small transformer inference engine with adaptive self-speculative
//! decoding.
//!
//! The draft model is never trained or searched for. Each request's prefill
//! measures how much every attention layer changes the hidden states, and
//! the draft is the full model with the most redundant layers skipped
//! ([`admg`]). Generation then drafts with that subnetwork and verifies
//! with the full model ([`specdec`]), which keeps the output identical in
//! distribution (and, greedily, token for token) to plain decoding.

pub mod admg;
pub mod model;
pub mod modelio;
pub mod specdec;
pub mod tensor;

pub use admg::{AblationMode, AcsStats, AdmgParams, LayerAcs, LayerStatsReport};
pub use model::{DraftSpec, KvCache, Model, ModelConfig, ModelError, Weights};
pub use specdec::{generate, DraftExitPolicy, GenerationConfig, GenerationOutput, RunMetrics, SpecError};
