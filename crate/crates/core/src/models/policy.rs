//! Autoregressive sequence likelihoods and the reward-weighted likelihood
//! loss, written against any next-token model.

use super::layers::Dropout;
use crate::autodiff::{Backward, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A model assigning next-token distributions to token sequences.
pub trait SequencePolicy<F: Scalar> {
    fn params(&self) -> &ParamStore<F>;

    fn params_mut(&mut self) -> &mut ParamStore<F>;

    /// Number of distinct output tokens.
    fn output_size(&self) -> usize;

    /// Longest sequence accepted by [`Self::next_token_logits`].
    fn max_len(&self) -> usize;

    /// Row `t` of sequence `i` in the returned `[Σ len_i, output_size]`
    /// matrix holds the logits for `seqs[i][t]` given `seqs[i][..t]`.
    fn next_token_logits(&self, g: &mut Graph<F>, seqs: &[&[usize]], dropout: &mut Dropout<'_>) -> Result<Var>;
}

fn validate<F: Scalar, P: SequencePolicy<F> + ?Sized>(policy: &P, ids: &[usize], k: usize) -> Result<()> {
    if ids.len() < k + 1 {
        return Err(Error::dim("log_prob", format!("length {} with condition length {k}", ids.len())));
    }
    if ids.len() > policy.max_len() {
        return Err(Error::Length { len: ids.len(), max: policy.max_len() });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= policy.output_size()) {
        return Err(Error::Vocab { id, size: policy.output_size() });
    }
    Ok(())
}

/// `Σ_{t≥k} log p(ids[t] | ids[..t])`: the log-likelihood of everything after
/// the first `k` (conditioning) tokens.
pub fn sequence_log_prob<F: Scalar, P: SequencePolicy<F> + ?Sized>(policy: &P, ids: &[usize], k: usize) -> Result<f64> {
    validate(policy, ids, k)?;
    let mut g = Graph::new();
    let logits = policy.next_token_logits(&mut g, &[ids], &mut Dropout::Off)?;
    let weights: Vec<f64> = (0..ids.len()).map(|t| if t >= k { 1.0 } else { 0.0 }).collect();
    let nll = g.weighted_nll(logits, ids, &weights)?;
    Ok(-g.value(nll).data()[0].to_acc())
}

/// One sampled sequence: tokens, of which the first `condition_len` were
/// given as the prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicySample<'a> {
    pub tokens: &'a [usize],
    pub condition_len: usize,
}

/// Builds `L = −Σ_i r_i · log P(sample_i)` on a fresh graph. Rewards are
/// plain numbers, so nothing flows back through them.
pub fn reinforce_loss<F: Scalar, P: SequencePolicy<F> + ?Sized>(
    policy: &P,
    g: &mut Graph<F>,
    samples: &[PolicySample<'_>],
    rewards: &[f64],
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    if samples.len() != rewards.len() {
        return Err(Error::dim("reinforce_loss", format!("{} samples, {} rewards", samples.len(), rewards.len())));
    }
    if samples.is_empty() {
        return Err(Error::EmptyLoss);
    }
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (s, &r) in samples.iter().zip(rewards) {
        validate(policy, s.tokens, s.condition_len)?;
        targets.extend_from_slice(s.tokens);
        weights.extend((0..s.tokens.len()).map(|t| if t >= s.condition_len { r } else { 0.0 }));
    }
    let seqs: Vec<&[usize]> = samples.iter().map(|s| s.tokens).collect();
    let logits = policy.next_token_logits(g, &seqs, dropout)?;
    g.weighted_nll(logits, &targets, &weights)
}

/// Value and backward result of the reward-weighted likelihood loss.
pub fn reinforce_gradients<F: Scalar, P: SequencePolicy<F> + ?Sized>(
    policy: &P,
    samples: &[PolicySample<'_>],
    rewards: &[f64],
    dropout: &mut Dropout<'_>,
) -> Result<(f64, Backward<F>)> {
    let mut g = Graph::new();
    let loss = reinforce_loss(policy, &mut g, samples, rewards, dropout)?;
    let value = g.value(loss).data()[0].to_acc();
    Ok((value, g.backward(loss)?))
}
