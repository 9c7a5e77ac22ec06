use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Seeded generator for one generation session.
///
/// ChaCha8 keyed by `ChaCha8Rng::seed_from_u64(seed)`. A uniform draw takes
/// the top 53 bits of one `next_u64` output and scales by 2^-53.
#[derive(Debug, Clone)]
pub struct SessionRng {
    inner: ChaCha8Rng,
}

impl SessionRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform in `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverse-CDF sample from a probability vector. Mass is accumulated in
    /// `f64`; rounding slack at the top end falls to the last index with
    /// nonzero probability.
    pub fn sample(&mut self, probs: &[f32]) -> usize {
        let u = self.next_uniform();
        sample_with(probs, u)
    }
}

pub(crate) fn sample_with(probs: &[f32], u: f64) -> usize {
    let total: f64 = probs.iter().map(|&p| p as f64).sum();
    let target = u * total;
    let mut cum = 0.0f64;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p as f64;
            if target < cum {
                return i;
            }
        }
    }
    last_positive
}
