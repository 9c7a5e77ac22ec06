//! Analytic multiply-accumulate counts for one decode step.
//!
//! Per executed sub-block, with `H` hidden, `F` MLP width, `V` vocab:
//!
//! | part                 | MACs                         |
//! |----------------------|------------------------------|
//! | attention sub-block  | `H` (norm) + `4H^2` (Q,K,V,O) |
//! | attention over context `c` | `2Hc` (scores + values)  |
//! | MLP sub-block        | `H` (norm) + `3HF`           |
//! | output               | `H` (final norm) + `HV`      |
//!
//! The embedding lookup costs nothing. Removed sub-blocks cost nothing.

use super::{DraftSpec, ModelConfig};

/// Context-independent MACs of one decode step under `spec`.
pub fn flops_per_token(config: &ModelConfig, spec: &DraftSpec) -> u64 {
    decode_macs(config, spec, 0)
}

/// MACs of one decode step attending over `context_len` cached positions.
pub fn decode_macs(config: &ModelConfig, spec: &DraftSpec, context_len: usize) -> u64 {
    let h = config.hidden_size as u64;
    let f = config.mlp_dim as u64;
    let v = config.vocab_size as u64;
    let attn = h + 4 * h * h + 2 * h * context_len as u64;
    let mlp = h + 3 * h * f;
    let mut total = h + h * v;
    for layer in 1..=config.num_layers {
        if !spec.removes_attn(layer) {
            total += attn;
        }
        if !spec.removes_mlp(layer) {
            total += mlp;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_size: 8,
            num_heads: 2,
            mlp_dim: 16,
            vocab_size: 32,
            max_seq_len: 16,
            eos_token: None,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn hand_counted_small_model() {
        // attention: 8 + 4*64 = 264; mlp: 8 + 3*8*16 = 392; head: 8 + 8*32 = 264
        // 2*264 + 2*392 + 264 = 1576
        assert_eq!(flops_per_token(&small(), &DraftSpec::full()), 1576);
        assert_eq!(decode_macs(&small(), &DraftSpec::full(), 10), 1576 + 2 * 2 * 8 * 10);
    }

    #[test]
    fn removing_layers_is_cheaper() {
        let cfg = small();
        let one = DraftSpec::new([1], []).unwrap();
        assert!(flops_per_token(&cfg, &DraftSpec::full()) > flops_per_token(&cfg, &one));
        assert_eq!(flops_per_token(&cfg, &DraftSpec::remove_all(2)), 8 + 8 * 32);
    }
}
