use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters of the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_eps: f32,
    pub rope_theta: f32,
    /// Generation stops once the full model emits this token.
    pub eos_token: Option<u32>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            hidden_size: 64,
            num_heads: 4,
            mlp_dim: 172,
            vocab_size: 257,
            max_seq_len: 512,
            norm_eps: 1e-5,
            rope_theta: 10_000.0,
            eos_token: Some(256),
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.num_layers < 1 {
            return fail("num_layers must be >= 1".into());
        }
        if self.num_heads == 0 || self.hidden_size == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return fail(format!("head_dim {} must be even for rotary encoding", self.head_dim()));
        }
        if self.mlp_dim == 0 {
            return fail("mlp_dim must be >= 1".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size {} must be >= 2", self.vocab_size));
        }
        if self.max_seq_len < 2 {
            return fail(format!("max_seq_len {} must be >= 2", self.max_seq_len));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return fail(format!("norm_eps {} must be positive", self.norm_eps));
        }
        if !(self.rope_theta > 0.0 && self.rope_theta.is_finite()) {
            return fail(format!("rope_theta {} must be positive", self.rope_theta));
        }
        if let Some(eos) = self.eos_token {
            if eos as usize >= self.vocab_size {
                return fail(format!("eos token {eos} outside vocab {}", self.vocab_size));
            }
        }
        Ok(())
    }
}
