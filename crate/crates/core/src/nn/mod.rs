//! Minimal neural-network stack: tensors, reverse-mode autodiff, the two
//! equalizer architectures, Adam and a binary checkpoint format.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod model;
mod tensor;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use graph::{Graph, Mode, Var};
pub use model::{
    multi_head_attention, positional_encoding, Architecture, AttentionVars, FcnnConfig, Model,
    TransformerConfig,
};
pub use tensor::Tensor;
pub use train::{equalize, evaluate_mse, train, TrainConfig, TrainOutcome};
