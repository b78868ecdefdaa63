//! Turning generator samples into labeled, chunked training data.

use rand::RngCore;

use super::config::{Chunking, RLConfig};
use crate::error::Result;
use crate::models::Generator;
use crate::scalar::Scalar;
use crate::text::{chunk, ingest, sample_seed_window, Chunk, LabeledSequence, Source, Vocab};

/// Anything that can continue token prompts and render tokens as text.
pub trait ContinuationSource {
    /// Prompt tokens for a seed window.
    fn prompt(&self, seed: &LabeledSequence) -> Vec<usize>;

    /// Full sequences (prompt then continuation) for every prompt.
    fn continue_batch(
        &self,
        prompts: &[Vec<usize>],
        max_new: usize,
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<usize>>>;

    fn render(&self, tokens: &[usize], vocab: &Vocab) -> String;
}

impl<F: Scalar> ContinuationSource for Generator<F> {
    fn prompt(&self, seed: &LabeledSequence) -> Vec<usize> {
        self.encode(seed)
    }

    fn continue_batch(
        &self,
        prompts: &[Vec<usize>],
        max_new: usize,
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<usize>>> {
        self.sample_batch(prompts, max_new, temperature, rng)
    }

    fn render(&self, tokens: &[usize], vocab: &Vocab) -> String {
        Generator::render(self, tokens, vocab)
    }
}

/// One generated sample: the token stream the generator produced and the
/// labeled data parsed from its continuation.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub tokens: Vec<usize>,
    /// Number of leading prompt tokens in `tokens`.
    pub condition_len: usize,
    pub sequence: LabeledSequence,
    pub chunks: Vec<Chunk>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratedBatch {
    pub samples: Vec<GeneratedSample>,
    /// Samples dropped because every attempt produced no words.
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl GeneratedBatch {
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.samples.iter().flat_map(|s| s.chunks.iter())
    }
}

/// Parses the continuation part of a token stream.
pub fn parse_continuation<S: ContinuationSource + ?Sized>(
    source: &S,
    tokens: &[usize],
    condition_len: usize,
    vocab: &Vocab,
) -> LabeledSequence {
    let text = source.render(&tokens[condition_len..], vocab);
    ingest(&text, vocab).unwrap_or_default()
}

/// Samples `cfg.gen_batch` seeds from `pool`, continues them, and parses the
/// continuations. Continuations under `cfg.min_words` words are redrawn from
/// the same prompt up to `cfg.max_retries` times and then kept as they are;
/// wordless ones are dropped. Chunk sequence ids start at `first_id`.
pub fn generate_batch<S: ContinuationSource + ?Sized>(
    source: &S,
    pool: &[LabeledSequence],
    cfg: &RLConfig,
    chunking: Chunking,
    vocab: &Vocab,
    first_id: usize,
    rng: &mut dyn RngCore,
) -> Result<GeneratedBatch> {
    let mut prompts = Vec::with_capacity(cfg.gen_batch);
    for _ in 0..cfg.gen_batch {
        let (i, start) = sample_seed_window(pool, cfg.seed_len, rng)?;
        prompts.push(source.prompt(&pool[i].slice(start, start + cfg.seed_len)));
    }
    let mut results: Vec<Option<(Vec<usize>, LabeledSequence)>> = vec![None; prompts.len()];
    let mut pending: Vec<usize> = (0..prompts.len()).collect();
    for attempt in 0..=cfg.max_retries {
        if pending.is_empty() {
            break;
        }
        let batch: Vec<Vec<usize>> = pending.iter().map(|&i| prompts[i].clone()).collect();
        let outputs = source.continue_batch(&batch, cfg.max_new, cfg.temperature, rng)?;
        let mut still = Vec::new();
        for (&i, tokens) in pending.iter().zip(outputs) {
            let seq = parse_continuation(source, &tokens, prompts[i].len(), vocab);
            let short = seq.len() < cfg.min_words;
            let better = results[i].as_ref().is_none_or(|(_, s)| seq.len() > s.len());
            if better {
                results[i] = Some((tokens, seq));
            }
            if short && attempt < cfg.max_retries {
                still.push(i);
            }
        }
        pending = still;
    }

    let mut out = GeneratedBatch::default();
    for (i, r) in results.into_iter().enumerate() {
        let (tokens, sequence) = r.expect("every prompt was attempted");
        if sequence.is_empty() {
            out.dropped += 1;
            continue;
        }
        let chunks = chunk(&sequence, chunking.core_size, chunking.context, Source::Generated, first_id + i)?;
        out.samples.push(GeneratedSample { tokens, condition_len: prompts[i].len(), sequence, chunks });
    }
    if out.dropped > 0 {
        out.warnings.push(format!(
            "degenerate generator: {} of {} samples produced no words after {} retries",
            out.dropped, cfg.gen_batch, cfg.max_retries
        ));
    }
    Ok(out)
}
