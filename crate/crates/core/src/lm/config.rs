use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Two blocks, width 128, four heads.
    pub fn teacher(vocab_size: usize, context_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            context_len,
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 256,
            seed,
        }
    }

    /// One block, width 32, two heads.
    pub fn student(vocab_size: usize, context_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            context_len,
            n_layers: 1,
            n_heads: 2,
            d_model: 32,
            d_ff: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} < 4", self.vocab_size));
        }
        if self.context_len < 8 {
            return fail(format!("context_len {} < 8", self.context_len));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("layer, head and width counts must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        Ok(())
    }
}
