//! Dense tensors, reverse-mode differentiation, and the policy and critic
//! networks.

pub mod checkpoint;
pub mod critic;
pub mod graph;
pub mod layers;
pub mod policy;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use critic::{critic_forward, CriticParams};
pub use graph::{Graph, Var};
pub use layers::{attention, lstm_step, AttentionParams, Linear, LstmCellParams, ParamSet};
pub use policy::{policy_forward, Decode, PolicyConfig, PolicyParams, Rollout};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward was already run on this graph")]
    GraphConsumed,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
