//! The iteration loop shared by every training mode.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Chunking, EvalPoint, RLConfig, RewardGranularity};
use super::generate::{generate_batch, GeneratedBatch};
use super::reward::{mean_std, sample_reward};
use super::steps::{chunks_gradient, dev_gradient, generator_update, lm_pretrain, sample_gradient, tagger_update};
use crate::autodiff::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::models::{Dropout, Generator, LossReduction, PolicySample, SequencePolicy, Tagger};
use crate::scalar::Scalar;
use crate::text::{chunk_all, AugmentationConfig, Augmenter, Chunk, LabeledSequence, Source, Vocab};

/// Training regime. Each mode adds one ingredient to the previous one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Supervised tagger training on clean data.
    Baseline,
    /// Plus noise augmentation of the training data.
    Augment,
    /// Plus generated data from a frozen generator.
    Gpt,
    /// Plus reward-driven generator updates.
    #[default]
    Rl,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Augment, Mode::Gpt, Mode::Rl];

    pub fn augments(self) -> bool {
        self != Mode::Baseline
    }

    pub fn generates(self) -> bool {
        matches!(self, Mode::Gpt | Mode::Rl)
    }

    pub fn rewards(self) -> bool {
        self == Mode::Rl
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Augment => "augment",
            Mode::Gpt => "gpt",
            Mode::Rl => "rl",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Telemetry for one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub tagger_loss: f64,
    pub tagger_grad_norm: f64,
    pub real_chunks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_chunks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Independent random streams, one per purpose, so that enabling one
/// ingredient never shifts the draws of another.
#[derive(Clone, Debug)]
pub struct Streams {
    pub data: ChaCha8Rng,
    pub generation: ChaCha8Rng,
    pub dev: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Streams { data: stream(1), generation: stream(2), dev: stream(3), dropout: stream(4) }
    }
}

/// Training data for a run.
#[derive(Clone, Copy, Debug)]
pub struct Corpus<'a> {
    pub train: &'a [LabeledSequence],
    pub dev: &'a [LabeledSequence],
    pub pool: &'a [LabeledSequence],
    pub vocab: &'a Vocab,
}

pub struct Trainer<'a, F: Scalar> {
    pub tagger: Tagger<F>,
    pub generator: Option<Generator<F>>,
    tagger_opt: AdamState<F>,
    generator_opt: Option<AdamState<F>>,
    mode: Mode,
    cfg: RLConfig,
    chunking: Chunking,
    augmenter: Option<Augmenter>,
    corpus: Corpus<'a>,
    dev_chunks: Vec<Chunk>,
    epoch_chunks: Vec<Chunk>,
    cursor: usize,
    epoch: usize,
    iteration: usize,
    generated_ids: usize,
    streams: Streams,
}

impl<'a, F: Scalar> Trainer<'a, F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: Mode,
        tagger: Tagger<F>,
        generator: Option<Generator<F>>,
        corpus: Corpus<'a>,
        cfg: RLConfig,
        chunking: Chunking,
        augmentation: AugmentationConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if chunking.window() > tagger.config().max_len {
            return Err(Error::Config(format!(
                "chunk window {} exceeds tagger max_len {}",
                chunking.window(),
                tagger.config().max_len
            )));
        }
        if corpus.train.iter().all(LabeledSequence::is_empty) {
            return Err(Error::EmptyInput("training set"));
        }
        let augmenter =
            if mode.augments() { Some(Augmenter::new(augmentation, tagger.config().vocab_size)?) } else { None };
        let generator = if mode.generates() {
            let g = generator.ok_or_else(|| Error::Config(format!("mode {} needs a generator", mode.as_str())))?;
            if g.word_vocab_size() != corpus.vocab.len() {
                return Err(Error::Config("generator vocabulary does not match the corpus vocabulary".into()));
            }
            let prompt_max = 2 * cfg.seed_len + cfg.max_new + 1;
            if prompt_max > g.config().max_len {
                return Err(Error::Config(format!(
                    "seed_len {} and max_new {} need generator max_len >= {prompt_max}",
                    cfg.seed_len, cfg.max_new
                )));
            }
            Some(g)
        } else {
            generator
        };
        let dev_chunks = if mode.rewards() {
            let dev: HashSet<&LabeledSequence> = corpus.dev.iter().collect();
            if corpus.pool.iter().chain(corpus.train).any(|s| dev.contains(s)) {
                return Err(Error::Config("a dev sequence also appears in the training set or seed pool".into()));
            }
            let chunks = chunk_all(corpus.dev, chunking.core_size, chunking.context, Source::Dev)?;
            if chunks.len() < cfg.dev_subset {
                return Err(Error::Config(format!(
                    "dev set has {} chunks, fewer than dev_subset {}",
                    chunks.len(),
                    cfg.dev_subset
                )));
            }
            chunks
        } else {
            Vec::new()
        };
        let tagger_opt = AdamState::new(tagger.params(), AdamConfig::with_lr(cfg.tagger_lr));
        let generator_opt = match (&generator, mode.rewards()) {
            (Some(g), true) => Some(AdamState::new(g.params(), AdamConfig::with_lr(cfg.generator_lr))),
            _ => None,
        };
        Ok(Trainer {
            tagger,
            generator,
            tagger_opt,
            generator_opt,
            mode,
            cfg,
            chunking,
            augmenter,
            corpus,
            dev_chunks,
            epoch_chunks: Vec::new(),
            cursor: 0,
            epoch: 0,
            iteration: 0,
            generated_ids: 0,
            streams: Streams::new(seed),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &RLConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Training chunks per epoch at the current augmentation draw.
    pub fn epoch_len(&mut self) -> Result<usize> {
        if self.epoch_chunks.is_empty() {
            self.new_epoch()?;
        }
        Ok(self.epoch_chunks.len())
    }

    fn new_epoch(&mut self) -> Result<()> {
        let seqs: Vec<LabeledSequence> = match &self.augmenter {
            Some(a) => self.corpus.train.iter().map(|s| a.apply(s, &mut self.streams.data)).collect(),
            None => self.corpus.train.to_vec(),
        };
        let mut chunks = chunk_all(&seqs, self.chunking.core_size, self.chunking.context, Source::Train)?;
        chunks.shuffle(&mut self.streams.data);
        self.epoch_chunks = chunks;
        self.cursor = 0;
        self.epoch += 1;
        Ok(())
    }

    fn next_train_batch(&mut self) -> Result<Vec<Chunk>> {
        if self.cursor >= self.epoch_chunks.len() {
            self.new_epoch()?;
        }
        let end = (self.cursor + self.cfg.train_batch).min(self.epoch_chunks.len());
        let batch = self.epoch_chunks[self.cursor..end].to_vec();
        self.cursor = end;
        if let Some(c) = batch.iter().find(|c| c.origin.source != Source::Train) {
            return Err(Error::Config(format!("non-training chunk from {:?} in B^train", c.origin.source)));
        }
        Ok(batch)
    }

    fn tagger_step(&mut self, generated: &[&Chunk], real: &[&Chunk]) -> Result<super::steps::StepOutcome> {
        let rate = self.tagger.config().dropout;
        if rate > 0.0 {
            let mut d = Dropout::On { rate, rng: &mut self.streams.dropout };
            tagger_update(&mut self.tagger, &mut self.tagger_opt, generated, real, self.cfg.clip_norm, &mut d)
        } else {
            tagger_update(
                &mut self.tagger,
                &mut self.tagger_opt,
                generated,
                real,
                self.cfg.clip_norm,
                &mut Dropout::Off,
            )
        }
    }

    /// Supervised epochs over the training data alone.
    pub fn pretrain_tagger(&mut self, epochs: usize) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            self.new_epoch()?;
            let mut total = 0.0;
            let mut n = 0;
            while self.cursor < self.epoch_chunks.len() {
                let real = self.next_train_batch()?;
                let refs: Vec<&Chunk> = real.iter().collect();
                total += self.tagger_step(&[], &refs)?.loss;
                n += 1;
            }
            losses.push(total / n.max(1) as f64);
        }
        Ok(losses)
    }

    /// Language-model epochs for the generator on the seed pool.
    pub fn pretrain_generator(&mut self, epochs: usize, batch_size: usize) -> Result<Vec<f64>> {
        let gen = self.generator.as_mut().ok_or_else(|| Error::Config("no generator to pretrain".into()))?;
        let streams: Vec<Vec<usize>> = self.corpus.pool.iter().map(|s| gen.encode(s)).collect();
        pretrain_generator_on(
            gen,
            &streams,
            epochs,
            batch_size,
            self.cfg.generator_lr,
            self.cfg.clip_norm,
            &mut self.streams.generation,
        )
    }

    /// Rewards of each retained sample against a fresh dev gradient, with the
    /// dev loss estimate.
    fn rewards(&mut self, generated: &GeneratedBatch) -> Result<(Vec<f64>, f64)> {
        let (dev_loss, dev) = dev_gradient(&self.tagger, &self.dev_chunks, self.cfg.dev_subset, &mut self.streams.dev)?;
        if generated.samples.is_empty() {
            return Ok((Vec::new(), dev_loss));
        }
        let rewards = match self.cfg.granularity {
            RewardGranularity::Sample => generated
                .samples
                .iter()
                .map(|s| sample_reward(&sample_gradient(&self.tagger, s)?, &dev, self.cfg.reward_mode))
                .collect::<Result<Vec<_>>>()?,
            RewardGranularity::Batch => {
                let chunks: Vec<&Chunk> = generated.chunks().collect();
                let (_, g) = chunks_gradient(&self.tagger, &chunks, LossReduction::Positions)?;
                vec![sample_reward(&g, &dev, self.cfg.reward_mode)?; generated.samples.len()]
            }
        };
        Ok((rewards, dev_loss))
    }

    /// One iteration of the mode's loop.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let generated = match (&self.generator, self.mode.generates()) {
            (Some(g), true) => generate_batch(
                g,
                self.corpus.pool,
                &self.cfg,
                self.chunking,
                self.corpus.vocab,
                self.generated_ids,
                &mut self.streams.generation,
            )?,
            _ => GeneratedBatch::default(),
        };
        self.generated_ids += self.cfg.gen_batch;
        let real = self.next_train_batch()?;

        let mut reward_info = None;
        if self.mode.rewards() && self.cfg.eval_point == EvalPoint::PreUpdate {
            reward_info = Some(self.rewards(&generated)?);
        }
        let gen_refs: Vec<&Chunk> = generated.chunks().collect();
        let real_refs: Vec<&Chunk> = real.iter().collect();
        let outcome = self.tagger_step(&gen_refs, &real_refs)?;
        if self.mode.rewards() && self.cfg.eval_point == EvalPoint::PostUpdate {
            reward_info = Some(self.rewards(&generated)?);
        }

        let mut record = IterationRecord {
            iteration: self.iteration,
            epoch: self.epoch,
            tagger_loss: outcome.loss,
            tagger_grad_norm: outcome.grad_norm,
            real_chunks: real.len(),
            generated_samples: None,
            generated_chunks: None,
            rewards: None,
            reward_mean: None,
            reward_std: None,
            dev_loss: None,
            generator_loss: None,
            warnings: generated.warnings.clone(),
        };
        if self.mode.generates() {
            record.generated_samples = Some(generated.samples.len());
            record.generated_chunks = Some(gen_refs.len());
        }
        if let Some((rewards, dev_loss)) = reward_info {
            let samples: Vec<PolicySample<'_>> = generated
                .samples
                .iter()
                .map(|s| PolicySample { tokens: &s.tokens, condition_len: s.condition_len })
                .collect();
            let gen = self.generator.as_mut().expect("rl mode has a generator");
            let opt = self.generator_opt.as_mut().expect("rl mode has a generator optimizer");
            let g_out = if samples.is_empty() {
                None
            } else {
                Some(generator_update(gen, opt, &samples, &rewards, self.cfg.reward_baseline, self.cfg.clip_norm)?)
            };
            let (mean, std) = mean_std(&rewards);
            record.reward_mean = Some(mean);
            record.reward_std = Some(std);
            record.rewards = Some(rewards);
            record.dev_loss = Some(dev_loss);
            record.generator_loss = Some(g_out.map_or(0.0, |o| o.loss));
        }
        self.iteration += 1;
        Ok(record)
    }

    /// Runs the configured number of iterations, handing every record to
    /// `observer` as it is produced.
    pub fn run(
        &mut self,
        observer: &mut dyn FnMut(&Self, &IterationRecord) -> Result<()>,
    ) -> Result<Vec<IterationRecord>> {
        let mut records = Vec::with_capacity(self.cfg.max_iterations);
        for _ in 0..self.cfg.max_iterations {
            let r = self.step()?;
            observer(self, &r)?;
            records.push(r);
        }
        Ok(records)
    }
}

/// Maximum-likelihood pretraining of a generator on encoded text.
pub fn pretrain_generator_on<F: Scalar>(
    gen: &mut Generator<F>,
    streams: &[Vec<usize>],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    clip: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut opt = AdamState::new(gen.params(), AdamConfig::with_lr(lr));
    let rate = gen.config().dropout;
    lm_pretrain(gen, &mut opt, streams, epochs, batch_size, clip, rate, rng)
}
