use serde::{Deserialize, Serialize};

use super::reward::RewardMode;
use crate::error::{Error, Result};

/// Which tagger parameters the reward gradients are taken at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalPoint {
    /// Before this iteration's tagger update.
    PreUpdate,
    /// After it.
    #[default]
    PostUpdate,
}

/// Per-sample rewards, or one reward shared by the whole generated batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardGranularity {
    #[default]
    Sample,
    Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    pub max_iterations: usize,
    pub gen_batch: usize,
    pub train_batch: usize,
    pub dev_subset: usize,
    pub seed_len: usize,
    pub max_new: usize,
    pub temperature: f64,
    pub reward_mode: RewardMode,
    pub reward_baseline: bool,
    pub eval_point: EvalPoint,
    pub granularity: RewardGranularity,
    pub tagger_lr: f64,
    pub generator_lr: f64,
    /// Global gradient-norm bound applied before each Adam step.
    pub clip_norm: Option<f64>,
    /// Continuations with fewer words are resampled.
    pub min_words: usize,
    pub max_retries: usize,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            max_iterations: 100,
            gen_batch: 8,
            train_batch: 16,
            dev_subset: 16,
            seed_len: 64,
            max_new: 96,
            temperature: 1.0,
            reward_mode: RewardMode::Cosine,
            reward_baseline: false,
            eval_point: EvalPoint::PostUpdate,
            granularity: RewardGranularity::Sample,
            tagger_lr: 1e-3,
            generator_lr: 1e-3,
            clip_norm: Some(1.0),
            min_words: 4,
            max_retries: 5,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("gen_batch", self.gen_batch),
            ("train_batch", self.train_batch),
            ("dev_subset", self.dev_subset),
            ("seed_len", self.seed_len),
            ("max_new", self.max_new),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        for (name, lr) in [("tagger_lr", self.tagger_lr), ("generator_lr", self.generator_lr)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::Config(format!("{name} {lr} must be positive")));
            }
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Chunk geometry shared by training, rewards and inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunking {
    pub core_size: usize,
    pub context: usize,
}

impl Default for Chunking {
    fn default() -> Self {
        Chunking { core_size: 64, context: 20 }
    }
}

impl Chunking {
    pub fn window(&self) -> usize {
        self.core_size + 2 * self.context
    }
}
