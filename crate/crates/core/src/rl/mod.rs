mod config;
mod generate;
mod reward;
mod steps;
mod trainer;

pub use config::{Chunking, EvalPoint, RLConfig, RewardGranularity};
pub use generate::{generate_batch, parse_continuation, ContinuationSource, GeneratedBatch, GeneratedSample};
pub use reward::{center, sample_reward, RewardMode, COSINE_EPS};
pub use steps::{
    chunks_gradient, dev_gradient, generator_update, lm_pretrain, sample_gradient, tagger_update, StepOutcome,
};
pub use trainer::{pretrain_generator_on, Corpus, IterationRecord, Mode, Streams, Trainer};
