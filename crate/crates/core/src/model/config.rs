use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::NUM_SPECIAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Exact (erf) GELU.
    Gelu,
}

/// Shape and numeric settings of a transformer-encoder masked LM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab_size: usize,
    pub layernorm_epsilon: f64,
    pub activation: Activation,
    /// Output projection shares the token-embedding matrix.
    pub head_tied: bool,
}

impl ModelConfig {
    /// A small encoder for synthetic corpora.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 32,
            num_heads: 4,
            ffn_dim: 128,
            vocab_size,
            max_positions: 16,
            type_vocab_size: 2,
            layernorm_epsilon: 1e-12,
            activation: Activation::Gelu,
            head_tied: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if self.num_heads == 0 || self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.vocab_size < NUM_SPECIAL + 1 {
            return fail(format!("vocab_size {} < {}", self.vocab_size, NUM_SPECIAL + 1));
        }
        if self.ffn_dim == 0 || self.max_positions < 3 || self.type_vocab_size == 0 {
            return fail("ffn_dim, type_vocab_size must be positive and max_positions >= 3".into());
        }
        if !(self.layernorm_epsilon > 0.0) {
            return fail("layernorm_epsilon must be positive".into());
        }
        Ok(())
    }
}
