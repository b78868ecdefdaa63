pub mod checkpoint;
mod config;
mod generator;
mod layers;
mod policy;
mod tagger;

pub use checkpoint::{CheckpointMeta, ModelKind};
pub use config::ModelConfig;
pub use generator::Generator;
pub use layers::Dropout;
pub use policy::{reinforce_gradients, reinforce_loss, sequence_log_prob, PolicySample, SequencePolicy};
pub use tagger::{ChunkBatch, LossReduction, Tagger};
