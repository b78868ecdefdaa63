//! The individual updates of one training iteration.

use rand::Rng;

use super::generate::GeneratedSample;
use super::reward::center;
use crate::autodiff::{AdamState, GradientVector, Gradients};
use crate::error::{Error, Result};
use crate::models::{reinforce_gradients, ChunkBatch, Dropout, LossReduction, PolicySample, SequencePolicy, Tagger};
use crate::scalar::Scalar;
use crate::text::Chunk;

/// Result of one optimizer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Loss before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// False when the gradient was exactly zero and no step was taken.
    pub stepped: bool,
}

fn apply<F: Scalar>(
    opt: &mut AdamState<F>,
    params: &mut crate::autodiff::ParamStore<F>,
    mut grads: Gradients<F>,
    clip: Option<f64>,
    loss: f64,
) -> Result<StepOutcome> {
    let grad_norm = match clip {
        Some(c) => grads.clip_global_norm(c),
        None => grads.global_norm(),
    };
    if grads.is_all_zero() {
        return Ok(StepOutcome { loss, grad_norm, stepped: false });
    }
    opt.update(params, &grads)?;
    Ok(StepOutcome { loss, grad_norm, stepped: true })
}

/// One cross-entropy step over the union of generated and real chunks, all
/// positions weighted alike.
pub fn tagger_update<F: Scalar>(
    tagger: &mut Tagger<F>,
    opt: &mut AdamState<F>,
    generated: &[&Chunk],
    real: &[&Chunk],
    clip: Option<f64>,
    dropout: &mut Dropout<'_>,
) -> Result<StepOutcome> {
    let batch = ChunkBatch::from_chunks(generated.iter().chain(real).copied());
    if batch.batch_size() == 0 {
        return Err(Error::EmptyInput("tagger update batch"));
    }
    let (loss, back) = tagger.loss_gradients(&batch, LossReduction::Positions, dropout)?;
    let grads = back.into_gradients(tagger.params());
    apply(opt, tagger.params_mut(), grads, clip, loss)
}

/// Gradient of the mean loss over `chunks`, dropout off.
pub fn chunks_gradient<F: Scalar>(
    tagger: &Tagger<F>,
    chunks: &[&Chunk],
    reduction: LossReduction,
) -> Result<(f64, GradientVector<F>)> {
    let batch = ChunkBatch::from_chunks(chunks.iter().copied());
    if batch.batch_size() == 0 {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let (loss, back) = tagger.loss_gradients(&batch, reduction, &mut Dropout::Off)?;
    Ok((loss, back.into_gradients(tagger.params()).flatten(tagger.params())?))
}

/// The tagger's gradient on one generated sample.
pub fn sample_gradient<F: Scalar>(tagger: &Tagger<F>, sample: &GeneratedSample) -> Result<GradientVector<F>> {
    let chunks: Vec<&Chunk> = sample.chunks.iter().collect();
    Ok(chunks_gradient(tagger, &chunks, LossReduction::Positions)?.1)
}

/// Average of per-chunk loss gradients over `subset` dev chunks drawn
/// uniformly without replacement, with the matching loss value.
pub fn dev_gradient<F: Scalar, R: Rng + ?Sized>(
    tagger: &Tagger<F>,
    dev: &[Chunk],
    subset: usize,
    rng: &mut R,
) -> Result<(f64, GradientVector<F>)> {
    if dev.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    if subset == 0 || subset > dev.len() {
        return Err(Error::Config(format!("dev subset {subset} for {} dev chunks", dev.len())));
    }
    let picked: Vec<&Chunk> = if subset == dev.len() {
        dev.iter().collect()
    } else {
        rand::seq::index::sample(rng, dev.len(), subset).into_iter().map(|i| &dev[i]).collect()
    };
    chunks_gradient(tagger, &picked, LossReduction::Chunks)
}

/// One Adam step on `L = −Σ r̃_i log P(sample_i)`, where `r̃` are the rewards,
/// mean-centered when `baseline` is set. No step is taken when every `r̃_i`
/// is zero.
pub fn generator_update<F: Scalar, P: SequencePolicy<F> + ?Sized>(
    policy: &mut P,
    opt: &mut AdamState<F>,
    samples: &[PolicySample<'_>],
    rewards: &[f64],
    baseline: bool,
    clip: Option<f64>,
) -> Result<StepOutcome> {
    if samples.len() != rewards.len() {
        return Err(Error::dim("generator_update", format!("{} samples, {} rewards", samples.len(), rewards.len())));
    }
    let weights = if baseline { center(rewards) } else { rewards.to_vec() };
    if weights.iter().all(|&r| r == 0.0) {
        return Ok(StepOutcome { loss: 0.0, grad_norm: 0.0, stepped: false });
    }
    let (loss, back) = reinforce_gradients(&*policy, samples, &weights, &mut Dropout::Off)?;
    let grads = back.into_gradients(policy.params());
    apply(opt, policy.params_mut(), grads, clip, loss)
}

/// Maximum-likelihood training of a sequence model on token streams.
/// Streams longer than the model's limit are split into windows. Returns the
/// mean loss of each epoch.
#[allow(clippy::too_many_arguments)]
pub fn lm_pretrain<F: Scalar, P: SequencePolicy<F> + ?Sized, R: Rng>(
    policy: &mut P,
    opt: &mut AdamState<F>,
    streams: &[Vec<usize>],
    epochs: usize,
    batch_size: usize,
    clip: Option<f64>,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    let window = policy.max_len();
    let mut windows: Vec<&[usize]> = streams.iter().flat_map(|s| s.chunks(window)).filter(|w| !w.is_empty()).collect();
    if windows.is_empty() && epochs > 0 {
        return Err(Error::EmptyInput("language-model pretraining data"));
    }
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        windows.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in windows.chunks(batch_size.max(1)) {
            let samples: Vec<PolicySample<'_>> =
                batch.iter().map(|w| PolicySample { tokens: w, condition_len: 0 }).collect();
            let n: usize = batch.iter().map(|w| w.len()).sum();
            let weights = vec![1.0 / n as f64; samples.len()];
            let (loss, back) = if dropout_rate > 0.0 {
                let mut d = Dropout::On { rate: dropout_rate, rng: &mut *rng };
                reinforce_gradients(&*policy, &samples, &weights, &mut d)?
            } else {
                reinforce_gradients(&*policy, &samples, &weights, &mut Dropout::Off)?
            };
            let grads = back.into_gradients(policy.params());
            apply(opt, policy.params_mut(), grads, clip, loss)?;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches.max(1) as f64);
    }
    Ok(losses)
}
