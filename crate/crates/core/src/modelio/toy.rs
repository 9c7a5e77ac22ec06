use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::model::{LayerWeights, ModelConfig, Weights};
use crate::tensor::Matrix;

/// Seeded random weights.
///
/// Values are uniform: embeddings in `[-1, 1)`, every projection with fan-in
/// `d` in `[-1/sqrt(d), 1/sqrt(d))`, norm gains exactly 1. The draw is pure
/// integer arithmetic followed by exact scaling, so a seed gives the same
/// bits on every platform.
pub fn make_toy_model(config: &ModelConfig, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, f, v) = (config.hidden_size, config.mlp_dim, config.vocab_size);
    let mut uniform = |rows: usize, cols: usize, scale: f32| -> Matrix {
        let data = (0..rows * cols)
            .map(|_| {
                let unit = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
                (unit * 2.0 - 1.0) * scale
            })
            .collect();
        Matrix::from_vec(rows, cols, data).expect("sized above")
    };
    let fan_in = |d: usize| 1.0 / (d as f32).sqrt();

    let tok_embed = uniform(v, h, 1.0);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            attn_norm: vec![1.0; h],
            wq: uniform(h, h, fan_in(h)),
            wk: uniform(h, h, fan_in(h)),
            wv: uniform(h, h, fan_in(h)),
            wo: uniform(h, h, fan_in(h)),
            mlp_norm: vec![1.0; h],
            w_gate: uniform(h, f, fan_in(h)),
            w_up: uniform(h, f, fan_in(h)),
            w_down: uniform(f, h, fan_in(f)),
        })
        .collect();
    let lm_head = uniform(h, v, fan_in(h));
    Weights {
        tok_embed,
        layers,
        final_norm: vec![1.0; h],
        lm_head,
    }
}

/// A toy model with deliberately redundant middle layers.
///
/// Layers `2..=L-2` are identical copies of one layer (adjacent duplicates)
/// whose attention output and MLP down projections are multiplied by
/// `residual_scale`, so they barely move the residual stream. Layer 1 and
/// the last two layers keep their full-scale random weights.
pub fn make_redundant_model(config: &ModelConfig, seed: u64, residual_scale: f32) -> Weights {
    let mut w = make_toy_model(config, seed);
    let num_layers = config.num_layers;
    if num_layers < 4 {
        return w;
    }
    let mut shared = w.layers[1].clone();
    scale_in_place(&mut shared.wo, residual_scale);
    scale_in_place(&mut shared.w_down, residual_scale);
    for layer in &mut w.layers[1..num_layers - 2] {
        *layer = shared.clone();
    }
    w
}

/// Zeroes every attention output projection, making each attention
/// sub-block an exact identity on the residual stream.
pub fn zero_attention_outputs(weights: &mut Weights) {
    for layer in &mut weights.layers {
        layer.wo.as_mut_slice().fill(0.0);
    }
}

fn scale_in_place(m: &mut Matrix, s: f32) {
    for v in m.as_mut_slice() {
        *v *= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { num_layers: 6, hidden_size: 16, num_heads: 2, mlp_dim: 24, ..ModelConfig::default() }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(make_toy_model(&cfg(), 42), make_toy_model(&cfg(), 42));
    }

    #[test]
    fn different_seeds_differ() {
        let a = make_toy_model(&cfg(), 1);
        let b = make_toy_model(&cfg(), 2);
        assert_ne!(a.layers[0].wq, b.layers[0].wq);
    }

    #[test]
    fn values_finite_and_within_scale() {
        let c = cfg();
        let w = make_toy_model(&c, 7);
        w.validate(&c).unwrap();
        let bound = |d: usize| 1.0 / (d as f32).sqrt();
        assert!(w.tok_embed.as_slice().iter().all(|v| v.abs() <= 1.0));
        for l in &w.layers {
            assert!(l.wq.as_slice().iter().all(|v| v.is_finite() && v.abs() <= bound(c.hidden_size)));
            assert!(l.w_down.as_slice().iter().all(|v| v.abs() <= bound(c.mlp_dim)));
            assert!(l.attn_norm.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn redundant_layers_are_adjacent_copies() {
        let c = cfg();
        let w = make_redundant_model(&c, 3, 0.1);
        let base = make_toy_model(&c, 3);
        assert_eq!(w.layers[0], base.layers[0]);
        assert_eq!(w.layers[2], w.layers[1]);
        assert_eq!(w.layers[3], w.layers[1]);
        assert_eq!(w.layers[4], base.layers[4]);
        assert_eq!(w.layers[5], base.layers[5]);
        assert_eq!(w.layers[1].wq, base.layers[1].wq);
        assert_ne!(w.layers[1].wo, base.layers[1].wo);
    }
}
