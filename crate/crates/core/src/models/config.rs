use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters for either network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn tagger(vocab_size: usize) -> Self {
        ModelConfig { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 256, max_len: 128, vocab_size, dropout: 0.1 }
    }

    /// `vocab_size` here is the word vocabulary; the generator adds three
    /// punctuation tokens on top of it.
    pub fn generator(vocab_size: usize) -> Self {
        ModelConfig { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 256, max_len: 192, vocab_size, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return bad("d_ff and max_len must be positive".into());
        }
        if self.vocab_size <= crate::text::RESERVED.len() {
            return bad(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0,1)", self.dropout));
        }
        Ok(())
    }
}
