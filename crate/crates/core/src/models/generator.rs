//! Causal language model over words plus literal punctuation tokens.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{normal_tensor, Dropout, KvCache, Linear, Norm, Stack};
use super::policy::{sequence_log_prob, SequencePolicy};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::{LabeledSequence, PunctLabel, Vocab, BOS, PAD, UNK};

/// Punctuation marks the generator can emit, in token order after the word
/// vocabulary.
const MARKS: [PunctLabel; 3] = [PunctLabel::Comma, PunctLabel::Period, PunctLabel::Question];

#[derive(Clone, Debug)]
pub struct Generator<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    tokens: ParamId,
    positions: ParamId,
    stack: Stack,
    norm: Norm,
    head: Linear,
}

impl<F: Scalar> Generator<F> {
    /// `config.vocab_size` is the word vocabulary size.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let out = config.vocab_size + MARKS.len();
        let mut params = ParamStore::new();
        let tokens = params.register("embed.tokens", normal_tensor(&[out, d], 1.0, rng));
        let positions = params.register("embed.positions", normal_tensor(&[config.max_len, d], 1.0, rng));
        let stack = Stack::register(&mut params, &config, true, rng);
        let norm = Norm::register(&mut params, "final_norm", d);
        let head = Linear::register(&mut params, "head", d, out, true, rng);
        Ok(Generator { config, params, tokens, positions, stack, norm, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn word_vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Token id of a punctuation mark, `None` for [`PunctLabel::None`].
    pub fn mark_token(&self, label: PunctLabel) -> Option<usize> {
        MARKS.iter().position(|&m| m == label).map(|i| self.config.vocab_size + i)
    }

    /// Punctuation carried by a token, if it is a mark token.
    pub fn token_mark(&self, token: usize) -> Option<PunctLabel> {
        token.checked_sub(self.config.vocab_size).and_then(|i| MARKS.get(i).copied())
    }

    /// Interleaves words with mark tokens: `hello, world.` becomes
    /// `[hello, ",", world, "."]`.
    pub fn encode(&self, seq: &LabeledSequence) -> Vec<usize> {
        let mut out = Vec::with_capacity(seq.len() * 2);
        for (&id, &label) in seq.word_ids.iter().zip(&seq.labels) {
            out.push(id);
            if let Some(t) = self.mark_token(label) {
                out.push(t);
            }
        }
        out
    }

    /// Renders generated tokens as punctuated text. Padding and BOS tokens
    /// are skipped.
    pub fn render(&self, tokens: &[usize], vocab: &Vocab) -> String {
        let mut out = String::new();
        for &t in tokens {
            if let Some(label) = self.token_mark(t) {
                out.push(label.mark().expect("mark tokens carry a mark"));
            } else if t != PAD && t != BOS {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(vocab.token(t).unwrap_or(vocab.token(UNK).unwrap_or("<unk>")));
            }
        }
        out
    }

    fn hidden(&self, g: &mut Graph<F>, inputs: &[&[usize]], dropout: &mut Dropout<'_>) -> Result<Var> {
        let lens: Vec<usize> = inputs.iter().map(|s| s.len()).collect();
        for &len in &lens {
            if len > self.config.max_len {
                return Err(Error::Length { len, max: self.config.max_len });
            }
        }
        let ids: Vec<usize> = inputs.iter().flat_map(|s| s.iter().copied()).collect();
        let pos: Vec<usize> = lens.iter().flat_map(|&n| 0..n).collect();
        let table = g.param(&self.params, self.tokens);
        let x = g.embedding(table, &ids)?;
        let ptable = g.param(&self.params, self.positions);
        let p = g.embedding(ptable, &pos)?;
        let x = g.add(x, p)?;
        let x = dropout.apply(g, x)?;
        let x = self.stack.forward(g, &self.params, x, &lens, dropout)?;
        self.norm.forward(g, &self.params, x)
    }

    fn shifted(seq: &[usize]) -> Vec<usize> {
        std::iter::once(BOS).chain(seq[..seq.len().saturating_sub(1)].iter().copied()).collect()
    }

    /// `Σ_{t≥k} log p(ids[t] | BOS, ids[..t])`.
    pub fn log_prob(&self, ids: &[usize], k: usize) -> Result<f64> {
        sequence_log_prob(self, ids, k)
    }

    /// Next-token probabilities after `BOS, prefix`, at the given temperature.
    pub fn next_distribution(&self, prefix: &[usize], temperature: f64) -> Result<Vec<f64>> {
        let mut out = self.next_distributions(&[prefix], temperature)?;
        Ok(out.pop().expect("one prefix"))
    }

    fn next_distributions(&self, prefixes: &[&[usize]], temperature: f64) -> Result<Vec<Vec<f64>>> {
        let inputs: Vec<Vec<usize>> =
            prefixes.iter().map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect()).collect();
        let views: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let mut g = Graph::new();
        let h = self.hidden(&mut g, &views, &mut Dropout::Off)?;
        let mut last = Vec::with_capacity(views.len());
        let mut end = 0;
        for v in &views {
            end += v.len();
            last.push(g.narrow(h, 0, end - 1, 1)?);
        }
        let rows = if last.len() == 1 { last[0] } else { g.concat(&last, 0)? };
        let logits = self.head.forward(&mut g, &self.params, rows)?;
        let t = g.value(logits);
        Ok((0..t.rows())
            .map(|r| {
                let row = t.row(r);
                let logits: Vec<f64> = row.iter().map(|v| v.to_acc()).collect();
                tempered(&logits, temperature)
            })
            .collect())
    }

    /// Ancestral sampling of up to `max_new` tokens after `seed`. The output
    /// starts with `seed`; generation stops early only when the model's
    /// length limit is reached.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        seed: &[usize],
        max_new: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let mut out = self.sample_batch(&[seed.to_vec()], max_new, temperature, rng)?;
        Ok(out.pop().expect("one sample"))
    }

    /// Samples continuations for several seeds in lockstep. Draws are taken
    /// in seed order at every step, so results are reproducible for a fixed
    /// RNG state. Decoding reuses cached keys and values, so each new token
    /// costs one position rather than a full forward pass.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        seeds: &[Vec<usize>],
        max_new: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<Vec<usize>>> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        let out_size = self.output_size();
        for s in seeds {
            if s.is_empty() {
                return Err(Error::EmptyInput("generation seed"));
            }
            if s.len() + 1 > self.config.max_len {
                return Err(Error::Length { len: s.len() + 1, max: self.config.max_len });
            }
            if let Some(&id) = s.iter().find(|&&id| id >= out_size) {
                return Err(Error::Vocab { id, size: out_size });
            }
        }
        let mut seqs: Vec<Vec<usize>> = seeds.to_vec();
        let mut states: Vec<Decoder> = Vec::with_capacity(seqs.len());
        for s in &seqs {
            let mut d = Decoder::default();
            for &t in std::iter::once(&BOS).chain(s) {
                self.decode(&mut d, t);
            }
            states.push(d);
        }
        for _ in 0..max_new {
            let mut any = false;
            for (seq, state) in seqs.iter_mut().zip(&mut states) {
                if seq.len() + 1 >= self.config.max_len {
                    continue;
                }
                any = true;
                let t = draw(&tempered(&state.logits, temperature), rng);
                seq.push(t);
                if seq.len() + 1 < self.config.max_len {
                    self.decode(state, t);
                }
            }
            if !any {
                break;
            }
        }
        Ok(seqs)
    }
}

/// Incremental decoding state of one sequence.
#[derive(Default)]
struct Decoder {
    cache: KvCache,
    len: usize,
    logits: Vec<f64>,
}

impl<F: Scalar> Generator<F> {
    /// Feeds one token, leaving the next-token logits in `state`.
    fn decode(&self, state: &mut Decoder, token: usize) {
        let d = self.config.d_model;
        let emb = self.params.get(self.tokens).data();
        let pos = self.params.get(self.positions).data();
        let x: Vec<f64> = emb[token * d..(token + 1) * d]
            .iter()
            .zip(&pos[state.len * d..(state.len + 1) * d])
            .map(|(a, b)| a.to_acc() + b.to_acc())
            .collect();
        let h = self.stack.step(&self.params, x, &mut state.cache);
        let h = self.norm.apply_row(&self.params, &h);
        state.logits = self.head.apply_row(&self.params, &h);
        state.len += 1;
    }
}

fn tempered(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum; take the last supported token.
    p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
}

impl<F: Scalar> SequencePolicy<F> for Generator<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn output_size(&self) -> usize {
        self.config.vocab_size + MARKS.len()
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn next_token_logits(&self, g: &mut Graph<F>, seqs: &[&[usize]], dropout: &mut Dropout<'_>) -> Result<Var> {
        let inputs: Vec<Vec<usize>> = seqs.iter().map(|s| Self::shifted(s)).collect();
        let views: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let h = self.hidden(g, &views, dropout)?;
        self.head.forward(g, &self.params, h)
    }
}
