//! Run configuration for `prrl train`.

use std::path::{Path, PathBuf};

use prrl_core::models::ModelConfig;
use prrl_core::rl::{Chunking, Mode, RLConfig};
use prrl_core::text::AugmentationConfig;
use prrl_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Clean in-topic text that seeds the generator. Required for gpt and rl.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_pool: Option<PathBuf>,
    /// Text for generator language-model pretraining; the seed pool is used
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_corpus: Option<PathBuf>,
    pub vocab: PathBuf,
    pub output_dir: PathBuf,
}

/// Model hyperparameters; the vocabulary size comes from the vocab file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl ModelSection {
    pub fn tagger() -> Self {
        Self::from_config(&ModelConfig::tagger(4))
    }

    pub fn generator() -> Self {
        Self::from_config(&ModelConfig::generator(4))
    }

    fn from_config(c: &ModelConfig) -> Self {
        ModelSection {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            max_len: c.max_len,
            dropout: c.dropout,
        }
    }

    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size,
            dropout: self.dropout,
        }
    }
}

fn default_tagger() -> ModelSection {
    ModelSection::tagger()
}

fn default_generator() -> ModelSection {
    ModelSection::generator()
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_gen_pretrain_batch() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub mode: Mode,
    pub paths: Paths,
    #[serde(default = "default_tagger")]
    pub tagger: ModelSection,
    #[serde(default = "default_generator")]
    pub generator: ModelSection,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub rl: RLConfig,
    #[serde(default)]
    pub chunking: Chunking,
    #[serde(default)]
    pub seed: u64,
    /// When set, replaces `rl.max_iterations` by enough iterations to visit
    /// the training chunks this many times.
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Iterations between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: usize,
    /// Supervised tagger epochs before the main loop.
    #[serde(default)]
    pub pretrain_pr: usize,
    /// Language-model epochs for the generator on `paths.lm_corpus`, or on
    /// the seed pool when that is absent.
    #[serde(default)]
    pub pretrain_gen: usize,
    #[serde(default = "default_gen_pretrain_batch")]
    pub pretrain_gen_batch: usize,
    /// Tagger checkpoint to start from instead of a fresh initialisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagger_init: Option<PathBuf>,
    /// Generator checkpoint to start from instead of a fresh initialisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_init: Option<PathBuf>,
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(mode: Mode, paths: Paths) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            mode,
            paths,
            tagger: ModelSection::tagger(),
            generator: ModelSection::generator(),
            augmentation: AugmentationConfig::default(),
            rl: RLConfig::default(),
            chunking: Chunking::default(),
            seed: 0,
            epochs: None,
            checkpoint_interval: 0,
            pretrain_pr: 0,
            pretrain_gen: 0,
            pretrain_gen_batch: default_gen_pretrain_batch(),
            tagger_init: None,
            generator_init: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Parses, then resolves relative paths against the config file's
    /// directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.train);
        fix(&mut paths.dev);
        fix(&mut paths.vocab);
        fix(&mut paths.output_dir);
        paths.test.as_mut().map(fix);
        paths.seed_pool.as_mut().map(fix);
        paths.lm_corpus.as_mut().map(fix);
        self.tagger_init.as_mut().map(fix);
        self.generator_init.as_mut().map(fix);
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let must_exist = |name: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} path {} does not exist", p.display())))
            }
        };
        must_exist("train", &self.paths.train)?;
        must_exist("dev", &self.paths.dev)?;
        must_exist("vocab", &self.paths.vocab)?;
        if let Some(t) = &self.paths.test {
            must_exist("test", t)?;
        }
        if let Some(t) = &self.tagger_init {
            must_exist("tagger_init", t)?;
        }
        if self.mode.generates() {
            let pool = self
                .paths
                .seed_pool
                .as_ref()
                .ok_or_else(|| Error::Config(format!("mode {} needs paths.seed_pool", self.mode.as_str())))?;
            must_exist("seed_pool", pool)?;
            if let Some(p) = &self.paths.lm_corpus {
                must_exist("lm_corpus", p)?;
            }
            if let Some(g) = &self.generator_init {
                must_exist("generator_init", g)?;
            }
        }
        if self.mode.augments() {
            self.augmentation.validate()?;
        }
        self.rl.validate()?;
        if self.chunking.core_size == 0 {
            return Err(Error::Config("chunking.core_size must be positive".into()));
        }
        if self.chunking.window() > self.tagger.max_len {
            return Err(Error::Config(format!(
                "chunk window {} exceeds tagger max_len {}",
                self.chunking.window(),
                self.tagger.max_len
            )));
        }
        self.tagger.with_vocab(4).validate()?;
        if self.mode.generates() {
            self.generator.with_vocab(4).validate()?;
        }
        if self.pretrain_gen > 0 && self.pretrain_gen_batch == 0 {
            return Err(Error::Config("pretrain_gen_batch must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
