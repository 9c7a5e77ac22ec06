use super::{ModelConfig, ModelError};

/// Per-layer key/value history for one sequence.
///
/// Storage is preallocated for `max_seq_len` positions. Layers skipped by a
/// draft spec receive no writes, so their rows past the shared `len` may hold
/// stale values; they are never read under that spec.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    width: usize,
    capacity: usize,
    len: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        let size = config.max_seq_len * config.hidden_size;
        Self {
            keys: (0..config.num_layers).map(|_| vec![0.0; size]).collect(),
            values: (0..config.num_layers).map(|_| vec![0.0; size]).collect(),
            width: config.hidden_size,
            capacity: config.max_seq_len,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_layers(&self) -> usize {
        self.keys.len()
    }

    /// Drops every position at or beyond `new_len`.
    pub fn truncate(&mut self, new_len: usize) -> Result<(), ModelError> {
        if new_len > self.len {
            return Err(ModelError::Truncate { new_len, len: self.len });
        }
        self.len = new_len;
        Ok(())
    }

    /// Populated keys of a 1-based layer, `len x hidden` row-major.
    pub fn keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer - 1][..self.len * self.width]
    }

    pub fn values(&self, layer: usize) -> &[f32] {
        &self.values[layer - 1][..self.len * self.width]
    }

    pub(crate) fn layer_rows(&self, layer_idx: usize, end: usize) -> (&[f32], &[f32]) {
        let n = end * self.width;
        (&self.keys[layer_idx][..n], &self.values[layer_idx][..n])
    }

    pub(crate) fn write_rows(&mut self, layer_idx: usize, start: usize, k: &[f32], v: &[f32]) {
        let a = start * self.width;
        self.keys[layer_idx][a..a + k.len()].copy_from_slice(k);
        self.values[layer_idx][a..a + v.len()].copy_from_slice(v);
    }

    pub(crate) fn advance(&mut self, n: usize) {
        self.len += n;
        debug_assert!(self.len <= self.capacity);
    }

    /// Truncates to `start`, then copies positions `start..end` from `source`
    /// for every 1-based layer accepted by `layers`, and sets `len = end`.
    pub fn sync_from(
        &mut self,
        source: &KvCache,
        start: usize,
        end: usize,
        layers: impl Fn(usize) -> bool,
    ) -> Result<(), ModelError> {
        if source.width != self.width || source.keys.len() != self.keys.len() {
            return Err(ModelError::Config("cache geometry mismatch".into()));
        }
        if end > source.len || end > self.capacity || start > end {
            return Err(ModelError::Capacity { needed: end, capacity: source.len.min(self.capacity) });
        }
        self.truncate(start)?;
        let (a, b) = (start * self.width, end * self.width);
        for idx in 0..self.keys.len() {
            if layers(idx + 1) {
                self.keys[idx][a..b].copy_from_slice(&source.keys[idx][a..b]);
                self.values[idx][a..b].copy_from_slice(&source.values[idx][a..b]);
            }
        }
        self.len = end;
        Ok(())
    }

    /// Largest elementwise difference over populated rows of the given layers.
    pub fn max_abs_diff(&self, other: &KvCache, layers: impl Fn(usize) -> bool) -> Option<f32> {
        if self.len != other.len || self.width != other.width || self.keys.len() != other.keys.len() {
            return None;
        }
        let mut worst = 0.0f32;
        for l in 1..=self.keys.len() {
            if !layers(l) {
                continue;
            }
            let pairs = self.keys(l).iter().zip(other.keys(l));
            for (a, b) in pairs.chain(self.values(l).iter().zip(other.values(l))) {
                worst = worst.max((a - b).abs());
            }
        }
        Some(worst)
    }
}
