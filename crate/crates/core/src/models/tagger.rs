//! Per-word punctuation classifier.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{normal_tensor, Dropout, Linear, Norm, Stack};
use crate::autodiff::{Backward, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::{Chunk, PunctLabel, PAD};

/// Chunks padded to a common width.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkBatch {
    pub ids: Vec<Vec<usize>>,
    /// `true` where the position is padding.
    pub pad: Vec<Vec<bool>>,
    pub labels: Vec<Vec<PunctLabel>>,
    pub loss_mask: Vec<Vec<bool>>,
}

impl ChunkBatch {
    pub fn from_chunks<'a>(chunks: impl IntoIterator<Item = &'a Chunk>) -> Self {
        let chunks: Vec<&Chunk> = chunks.into_iter().collect();
        let width = chunks.iter().map(|c| c.token_ids.len()).max().unwrap_or(0);
        let mut b = ChunkBatch { ids: vec![], pad: vec![], labels: vec![], loss_mask: vec![] };
        for c in chunks {
            let n = c.token_ids.len();
            let fill = width - n;
            b.ids.push(c.token_ids.iter().copied().chain(std::iter::repeat_n(PAD, fill)).collect());
            b.pad.push((0..width).map(|i| i >= n).collect());
            b.labels.push(c.labels.iter().copied().chain(std::iter::repeat_n(PunctLabel::None, fill)).collect());
            b.loss_mask.push(c.loss_mask.iter().copied().chain(std::iter::repeat_n(false, fill)).collect());
        }
        b
    }

    /// Unlabelled batch with every position scored.
    pub fn from_ids(seqs: &[Vec<usize>]) -> Self {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut b = ChunkBatch { ids: vec![], pad: vec![], labels: vec![], loss_mask: vec![] };
        for s in seqs {
            let fill = width - s.len();
            b.ids.push(s.iter().copied().chain(std::iter::repeat_n(PAD, fill)).collect());
            b.pad.push((0..width).map(|i| i >= s.len()).collect());
            b.labels.push(vec![PunctLabel::None; width]);
            b.loss_mask.push((0..width).map(|i| i < s.len()).collect());
        }
        b
    }

    pub fn batch_size(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let w = self.width();
        let ok = self.ids.iter().all(|r| r.len() == w)
            && [self.pad.len(), self.labels.len(), self.loss_mask.len()].iter().all(|&n| n == self.ids.len())
            && self.pad.iter().chain(&self.loss_mask).all(|r| r.len() == w)
            && self.labels.iter().all(|r| r.len() == w);
        if ok {
            Ok(())
        } else {
            Err(Error::dim("tagger_forward", "ragged chunk batch"))
        }
    }
}

/// How per-position losses are averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossReduction {
    /// Mean over every scored position in the batch.
    #[default]
    Positions,
    /// Mean over chunks of each chunk's own mean.
    Chunks,
}

#[derive(Clone, Debug)]
pub struct Tagger<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    tokens: ParamId,
    positions: ParamId,
    stack: Stack,
    norm: Norm,
    head: Linear,
}

impl<F: Scalar> Tagger<F> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut params = ParamStore::new();
        let tokens = params.register("embed.tokens", normal_tensor(&[config.vocab_size, d], 1.0, rng));
        let positions = params.register("embed.positions", normal_tensor(&[config.max_len, d], 1.0, rng));
        let stack = Stack::register(&mut params, &config, false, rng);
        let norm = Norm::register(&mut params, "final_norm", d);
        let head = Linear::register(&mut params, "head", d, PunctLabel::COUNT, true, rng);
        Ok(Tagger { config, params, tokens, positions, stack, norm, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Logits for the non-pad positions of every row, packed row-major into
    /// `[n_unpadded, 4]`.
    pub fn packed_logits(&self, g: &mut Graph<F>, batch: &ChunkBatch, dropout: &mut Dropout<'_>) -> Result<Var> {
        batch.validate()?;
        if batch.width() > self.config.max_len {
            return Err(Error::Length { len: batch.width(), max: self.config.max_len });
        }
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut lens = Vec::new();
        for (row, pad) in batch.ids.iter().zip(&batch.pad) {
            let before = ids.len();
            for (t, (&id, &p)) in row.iter().zip(pad).enumerate() {
                if !p {
                    ids.push(id);
                    pos.push(t);
                }
            }
            if ids.len() > before {
                lens.push(ids.len() - before);
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput("tagger batch"));
        }
        let table = g.param(&self.params, self.tokens);
        let x = g.embedding(table, &ids)?;
        let ptable = g.param(&self.params, self.positions);
        let p = g.embedding(ptable, &pos)?;
        let x = g.add(x, p)?;
        let x = dropout.apply(g, x)?;
        let x = self.stack.forward(g, &self.params, x, &lens, dropout)?;
        let x = self.norm.forward(g, &self.params, x)?;
        self.head.forward(g, &self.params, x)
    }

    /// Logits `[batch, width, 4]`; padded positions hold zeros.
    pub fn forward(&self, batch: &ChunkBatch) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let packed = self.packed_logits(&mut g, batch, &mut Dropout::Off)?;
        let packed = g.value(packed).data();
        let (b, w, c) = (batch.batch_size(), batch.width(), PunctLabel::COUNT);
        let mut out = vec![F::zero(); b * w * c];
        let mut next = 0;
        for (i, pad) in batch.pad.iter().enumerate() {
            for (t, &p) in pad.iter().enumerate() {
                if !p {
                    let dst = (i * w + t) * c;
                    out[dst..dst + c].copy_from_slice(&packed[next * c..(next + 1) * c]);
                    next += 1;
                }
            }
        }
        Tensor::new(vec![b, w, c], out)
    }

    /// Cross-entropy over positions that are in the loss mask and not
    /// padding.
    pub fn loss(
        &self,
        g: &mut Graph<F>,
        batch: &ChunkBatch,
        reduction: LossReduction,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        batch.validate()?;
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let counts: Vec<usize> = batch
            .loss_mask
            .iter()
            .zip(&batch.pad)
            .map(|(m, p)| m.iter().zip(p).filter(|(&m, &p)| m && !p).count())
            .collect();
        let total: usize = counts.iter().sum();
        let scored_rows = counts.iter().filter(|&&n| n > 0).count();
        if total == 0 {
            return Err(Error::EmptyLoss);
        }
        for (i, pad) in batch.pad.iter().enumerate() {
            let w = match reduction {
                LossReduction::Positions => 1.0 / total as f64,
                LossReduction::Chunks if counts[i] > 0 => 1.0 / (scored_rows * counts[i]) as f64,
                LossReduction::Chunks => 0.0,
            };
            for (t, &p) in pad.iter().enumerate() {
                if !p {
                    targets.push(batch.labels[i][t].index());
                    weights.push(if batch.loss_mask[i][t] { w } else { 0.0 });
                }
            }
        }
        let logits = self.packed_logits(g, batch, dropout)?;
        g.weighted_nll(logits, &targets, &weights)
    }

    /// Loss value and its backward pass on a fresh graph.
    pub fn loss_gradients(
        &self,
        batch: &ChunkBatch,
        reduction: LossReduction,
        dropout: &mut Dropout<'_>,
    ) -> Result<(f64, Backward<F>)> {
        let mut g = Graph::new();
        let loss = self.loss(&mut g, batch, reduction, dropout)?;
        let value = g.value(loss).data()[0].to_acc();
        Ok((value, g.backward(loss)?))
    }

    /// Loss value without building gradients.
    pub fn loss_value(&self, batch: &ChunkBatch, reduction: LossReduction) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.loss(&mut g, batch, reduction, &mut Dropout::Off)?;
        Ok(g.value(loss).data()[0].to_acc())
    }
}
