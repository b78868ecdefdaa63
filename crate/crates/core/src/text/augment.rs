//! ASR-style noise: duplication, alternation (substitution) and deletion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::label::PunctLabel;
use super::sequence::LabeledSequence;
use super::vocab::RESERVED;
use crate::error::{Error, Result};

/// Per-word probabilities of each edit. At most one edit fires per word, so
/// the total edit probability is the sum of the three.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub alpha_dup: f64,
    pub alpha_sub: f64,
    pub alpha_del: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig { alpha_dup: 0.05, alpha_sub: 0.05, alpha_del: 0.05 }
    }
}

impl AugmentationConfig {
    pub const NONE: AugmentationConfig = AugmentationConfig { alpha_dup: 0.0, alpha_sub: 0.0, alpha_del: 0.0 };

    pub fn uniform(alpha: f64) -> Self {
        AugmentationConfig { alpha_dup: alpha, alpha_sub: alpha, alpha_del: alpha }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_dup, self.alpha_sub, self.alpha_del];
        if all.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config(format!("augmentation probabilities must lie in [0,1]: {all:?}")));
        }
        if all.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("augmentation probabilities sum above 1: {all:?}")));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.alpha_dup == 0.0 && self.alpha_sub == 0.0 && self.alpha_del == 0.0
    }
}

/// Counts of edits applied by [`Augmenter::apply_with_stats`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentStats {
    pub words: usize,
    pub duplicated: usize,
    pub substituted: usize,
    pub deleted: usize,
}

impl std::ops::AddAssign for AugmentStats {
    fn add_assign(&mut self, o: Self) {
        self.words += o.words;
        self.duplicated += o.duplicated;
        self.substituted += o.substituted;
        self.deleted += o.deleted;
    }
}

/// Applies an [`AugmentationConfig`] over a vocabulary of `vocab_size` ids.
#[derive(Clone, Copy, Debug)]
pub struct Augmenter {
    pub config: AugmentationConfig,
    pub vocab_size: usize,
}

impl Augmenter {
    pub fn new(config: AugmentationConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        Ok(Augmenter { config, vocab_size })
    }

    pub fn apply<R: Rng + ?Sized>(&self, seq: &LabeledSequence, rng: &mut R) -> LabeledSequence {
        self.apply_with_stats(seq, rng).0
    }

    /// Edits each word independently:
    /// - duplication emits the word twice; the first copy is unlabeled and the
    ///   original label sits on the last copy;
    /// - substitution swaps in a uniformly drawn non-reserved id, keeping the
    ///   label;
    /// - deletion drops the word; its label moves to the previous output word
    ///   when that word is unlabeled, and is dropped otherwise.
    pub fn apply_with_stats<R: Rng + ?Sized>(
        &self,
        seq: &LabeledSequence,
        rng: &mut R,
    ) -> (LabeledSequence, AugmentStats) {
        let AugmentationConfig { alpha_dup, alpha_sub, alpha_del } = self.config;
        let mut stats = AugmentStats { words: seq.len(), ..Default::default() };
        if self.config.is_identity() {
            return (seq.clone(), stats);
        }
        let first_free = RESERVED.len();
        let mut out = LabeledSequence::default();
        for (&id, &label) in seq.word_ids.iter().zip(&seq.labels) {
            let u: f64 = rng.gen();
            if u < alpha_dup {
                stats.duplicated += 1;
                out.push(id, PunctLabel::None);
                out.push(id, label);
            } else if u < alpha_dup + alpha_sub {
                stats.substituted += 1;
                let new_id = if self.vocab_size > first_free { rng.gen_range(first_free..self.vocab_size) } else { id };
                out.push(new_id, label);
            } else if u < alpha_dup + alpha_sub + alpha_del {
                stats.deleted += 1;
                if label != PunctLabel::None {
                    if let Some(prev) = out.labels.last_mut() {
                        if *prev == PunctLabel::None {
                            *prev = label;
                        }
                    }
                }
            } else {
                out.push(id, label);
            }
        }
        (out, stats)
    }
}
