//! Pre-norm decoder-only transformer with rotary attention and a gated MLP.
//!
//! The same [`Model`] serves as the full model and as every draft
//! subnetwork: a [`DraftSpec`] passed to [`Model::forward`] selects which
//! sub-blocks are skipped. A skipped sub-block (including its norm) is an
//! identity on the residual stream and writes nothing to the cache.

mod cache;
mod config;
mod draft;
mod flops;

use std::time::Instant;

use thiserror::Error;

pub use cache::KvCache;
pub use config::ModelConfig;
pub use draft::DraftSpec;
pub use flops::{decode_macs, flops_per_token};

use crate::tensor::{matmul_into, rms_norm_into, silu, Matrix, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence of {needed} positions exceeds capacity {capacity}")]
    Capacity { needed: usize, capacity: usize },
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("cannot truncate cache of length {len} to {new_len}")]
    Truncate { new_len: usize, len: usize },
    #[error("layer index {layer} outside 1..={num_layers}")]
    LayerIndex { layer: usize, num_layers: usize },
    #[error("weight {name} has shape {got:?}, expected {want:?}")]
    WeightShape {
        name: String,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which residual sub-block of a layer an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sublayer {
    Attention,
    Mlp,
}

/// Observer of hidden states entering and leaving each sub-block.
///
/// Called once per layer, sub-block and input position, skipped sub-blocks
/// included (with `after == before`). Observation only.
pub trait ResidualTap {
    fn observe(&mut self, sublayer: Sublayer, layer: usize, before: &[f32], after: &[f32]);
}

impl<F: FnMut(Sublayer, usize, &[f32], &[f32])> ResidualTap for F {
    fn observe(&mut self, sublayer: Sublayer, layer: usize, before: &[f32], after: &[f32]) {
        self(sublayer, layer, before, after)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Vec<f32>,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

/// Dense parameters. Projections are stored `in x out` so activations
/// multiply on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tok_embed: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    pub lm_head: Matrix,
}

impl Weights {
    /// Every named tensor in storage order with its expected shape.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (h, f, v) = (config.hidden_size, config.mlp_dim, config.vocab_size);
        let mut out = vec![("tok_embed".to_string(), (v, h))];
        for i in 0..config.num_layers {
            for (name, shape) in [
                ("attn_norm", (1, h)),
                ("wq", (h, h)),
                ("wk", (h, h)),
                ("wv", (h, h)),
                ("wo", (h, h)),
                ("mlp_norm", (1, h)),
                ("w_gate", (h, f)),
                ("w_up", (h, f)),
                ("w_down", (f, h)),
            ] {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("final_norm".to_string(), (1, h)));
        out.push(("lm_head".to_string(), (h, v)));
        out
    }

    /// Flat views of every tensor, in the order of [`Weights::expected_shapes`].
    pub fn tensors(&self) -> Vec<(&[f32], (usize, usize))> {
        let vec_shape = |v: &Vec<f32>| (1, v.len());
        let mut out: Vec<(&[f32], (usize, usize))> = vec![(self.tok_embed.as_slice(), self.tok_embed.shape())];
        for l in &self.layers {
            out.push((&l.attn_norm, vec_shape(&l.attn_norm)));
            for m in [&l.wq, &l.wk, &l.wv, &l.wo] {
                out.push((m.as_slice(), m.shape()));
            }
            out.push((&l.mlp_norm, vec_shape(&l.mlp_norm)));
            for m in [&l.w_gate, &l.w_up, &l.w_down] {
                out.push((m.as_slice(), m.shape()));
            }
        }
        out.push((&self.final_norm, vec_shape(&self.final_norm)));
        out.push((self.lm_head.as_slice(), self.lm_head.shape()));
        out
    }

    /// Rebuilds weights from flat tensors in storage order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Vec<f32>>) -> Result<Self, ModelError> {
        let shapes = Self::expected_shapes(config);
        if tensors.len() != shapes.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter().zip(shapes);
        let mut next_matrix = || -> Result<Matrix, ModelError> {
            let (data, (name, (r, c))) = it.next().expect("length checked");
            Matrix::from_vec(r, c, data).map_err(|_| ModelError::Config(format!("bad tensor {name}")))
        };
        let tok_embed = next_matrix()?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(LayerWeights {
                attn_norm: next_matrix()?.into_vec(),
                wq: next_matrix()?,
                wk: next_matrix()?,
                wv: next_matrix()?,
                wo: next_matrix()?,
                mlp_norm: next_matrix()?.into_vec(),
                w_gate: next_matrix()?,
                w_up: next_matrix()?,
                w_down: next_matrix()?,
            });
        }
        let final_norm = next_matrix()?.into_vec();
        let lm_head = next_matrix()?;
        let w = Self { tok_embed, layers, final_norm, lm_head };
        w.validate(config)?;
        Ok(w)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<(), ModelError> {
        if self.layers.len() != config.num_layers {
            return Err(ModelError::Config(format!(
                "{} layers of weights for a {}-layer config",
                self.layers.len(),
                config.num_layers
            )));
        }
        for ((data, got), (name, want)) in self.tensors().into_iter().zip(Self::expected_shapes(config)) {
            if got != want {
                return Err(ModelError::WeightShape { name, got, want });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Config(format!("non-finite value in {name}")));
            }
        }
        Ok(())
    }
}

/// Accumulated wall time of executed sub-blocks, per 1-based layer.
#[derive(Debug, Clone, Default)]
pub struct LayerTimings {
    pub attn_ns: Vec<u128>,
    pub attn_calls: Vec<u64>,
    pub mlp_ns: Vec<u128>,
    pub mlp_calls: Vec<u64>,
}

impl LayerTimings {
    pub fn new(num_layers: usize) -> Self {
        Self {
            attn_ns: vec![0; num_layers],
            attn_calls: vec![0; num_layers],
            mlp_ns: vec![0; num_layers],
            mlp_calls: vec![0; num_layers],
        }
    }

    fn record(&mut self, sublayer: Sublayer, idx: usize, ns: u128) {
        let (t, c) = match sublayer {
            Sublayer::Attention => (&mut self.attn_ns, &mut self.attn_calls),
            Sublayer::Mlp => (&mut self.mlp_ns, &mut self.mlp_calls),
        };
        t[idx] += ns;
        c[idx] += 1;
    }

    /// Mean milliseconds per forward call for each layer (0 if never run).
    pub fn mean_ms(&self, sublayer: Sublayer) -> Vec<f64> {
        let (t, c) = match sublayer {
            Sublayer::Attention => (&self.attn_ns, &self.attn_calls),
            Sublayer::Mlp => (&self.mlp_ns, &self.mlp_calls),
        };
        t.iter()
            .zip(c)
            .map(|(&ns, &n)| if n == 0 { 0.0 } else { ns as f64 / n as f64 / 1e6 })
            .collect()
    }
}

pub struct Model {
    config: ModelConfig,
    weights: Weights,
    rope_cos: Vec<f32>,
    rope_sin: Vec<f32>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self, ModelError> {
        config.validate()?;
        weights.validate(&config)?;
        let half = config.head_dim() / 2;
        let mut rope_cos = Vec::with_capacity(config.max_seq_len * half);
        let mut rope_sin = Vec::with_capacity(config.max_seq_len * half);
        for pos in 0..config.max_seq_len {
            for i in 0..half {
                let freq = (config.rope_theta as f64).powf(-2.0 * i as f64 / config.head_dim() as f64);
                let angle = pos as f64 * freq;
                rope_cos.push(angle.cos() as f32);
                rope_sin.push(angle.sin() as f32);
            }
        }
        Ok(Self { config, weights, rope_cos, rope_sin })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn into_parts(self) -> (ModelConfig, Weights) {
        (self.config, self.weights)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(&self.config)
    }

    /// Runs `tokens` at positions `cache.len()..` and returns next-token
    /// logits for every input position (`tokens.len() x vocab`).
    pub fn forward(
        &self,
        tokens: &[u32],
        cache: &mut KvCache,
        spec: &DraftSpec,
        tap: Option<&mut dyn ResidualTap>,
    ) -> Result<Matrix, ModelError> {
        self.forward_timed(tokens, cache, spec, tap, None)
    }

    pub fn forward_timed(
        &self,
        tokens: &[u32],
        cache: &mut KvCache,
        spec: &DraftSpec,
        mut tap: Option<&mut dyn ResidualTap>,
        mut timings: Option<&mut LayerTimings>,
    ) -> Result<Matrix, ModelError> {
        let cfg = &self.config;
        let (h, f, n) = (cfg.hidden_size, cfg.mlp_dim, tokens.len());
        let start = cache.len();
        if start + n > cfg.max_seq_len || cache.capacity() != cfg.max_seq_len {
            return Err(ModelError::Capacity { needed: start + n, capacity: cfg.max_seq_len });
        }
        if cache.num_layers() != cfg.num_layers {
            return Err(ModelError::Config("cache built for a different model".into()));
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { token, vocab: cfg.vocab_size });
        }
        spec.check_layers(cfg.num_layers)?;

        let mut hidden = Vec::with_capacity(n * h);
        for &t in tokens {
            hidden.extend_from_slice(self.weights.tok_embed.row(t as usize));
        }
        let mut normed = vec![0.0f32; n * h];
        let mut q = vec![0.0f32; n * h];
        let mut k = vec![0.0f32; n * h];
        let mut v = vec![0.0f32; n * h];
        let mut attn = vec![0.0f32; n * h];
        let mut proj = vec![0.0f32; n * h];
        let mut gate = vec![0.0f32; n * f];
        let mut up = vec![0.0f32; n * f];

        for (idx, lw) in self.weights.layers.iter().enumerate() {
            let layer = idx + 1;

            if spec.removes_attn(layer) {
                if let Some(tap) = tap.as_deref_mut() {
                    for row in hidden.chunks_exact(h) {
                        tap.observe(Sublayer::Attention, layer, row, row);
                    }
                }
            } else {
                let t0 = timings.is_some().then(Instant::now);
                for (x, o) in hidden.chunks_exact(h).zip(normed.chunks_exact_mut(h)) {
                    rms_norm_into(x, &lw.attn_norm, cfg.norm_eps, o);
                }
                matmul_into(&normed, n, h, lw.wq.as_slice(), h, &mut q);
                matmul_into(&normed, n, h, lw.wk.as_slice(), h, &mut k);
                matmul_into(&normed, n, h, lw.wv.as_slice(), h, &mut v);
                for r in 0..n {
                    self.apply_rope(&mut q[r * h..(r + 1) * h], start + r);
                    self.apply_rope(&mut k[r * h..(r + 1) * h], start + r);
                }
                cache.write_rows(idx, start, &k, &v);
                let (keys, values) = cache.layer_rows(idx, start + n);
                self.attend(&q, keys, values, start, &mut attn);
                matmul_into(&attn, n, h, lw.wo.as_slice(), h, &mut proj);
                for (r, (x, p)) in hidden.chunks_exact_mut(h).zip(proj.chunks_exact(h)).enumerate() {
                    if let Some(tap) = tap.as_deref_mut() {
                        // normed is free scratch again; keep the pre-attention row there
                        let before = &mut normed[r * h..(r + 1) * h];
                        before.copy_from_slice(x);
                        for (a, b) in x.iter_mut().zip(p) {
                            *a += b;
                        }
                        tap.observe(Sublayer::Attention, layer, before, x);
                    } else {
                        for (a, b) in x.iter_mut().zip(p) {
                            *a += b;
                        }
                    }
                }
                if let (Some(t), Some(t0)) = (timings.as_deref_mut(), t0) {
                    t.record(Sublayer::Attention, idx, t0.elapsed().as_nanos());
                }
            }

            if spec.removes_mlp(layer) {
                if let Some(tap) = tap.as_deref_mut() {
                    for row in hidden.chunks_exact(h) {
                        tap.observe(Sublayer::Mlp, layer, row, row);
                    }
                }
            } else {
                let t0 = timings.is_some().then(Instant::now);
                for (x, o) in hidden.chunks_exact(h).zip(normed.chunks_exact_mut(h)) {
                    rms_norm_into(x, &lw.mlp_norm, cfg.norm_eps, o);
                }
                matmul_into(&normed, n, h, lw.w_gate.as_slice(), f, &mut gate);
                matmul_into(&normed, n, h, lw.w_up.as_slice(), f, &mut up);
                for (g, u) in gate.iter_mut().zip(&up) {
                    *g = silu(*g) * u;
                }
                matmul_into(&gate, n, f, lw.w_down.as_slice(), h, &mut proj);
                for (r, (x, p)) in hidden.chunks_exact_mut(h).zip(proj.chunks_exact(h)).enumerate() {
                    if let Some(tap) = tap.as_deref_mut() {
                        let before = &mut normed[r * h..(r + 1) * h];
                        before.copy_from_slice(x);
                        for (a, b) in x.iter_mut().zip(p) {
                            *a += b;
                        }
                        tap.observe(Sublayer::Mlp, layer, before, x);
                    } else {
                        for (a, b) in x.iter_mut().zip(p) {
                            *a += b;
                        }
                    }
                }
                if let (Some(t), Some(t0)) = (timings.as_deref_mut(), t0) {
                    t.record(Sublayer::Mlp, idx, t0.elapsed().as_nanos());
                }
            }
        }
        cache.advance(n);

        for (x, o) in hidden.chunks_exact(h).zip(normed.chunks_exact_mut(h)) {
            rms_norm_into(x, &self.weights.final_norm, cfg.norm_eps, o);
        }
        let mut logits = Matrix::zeros(n, cfg.vocab_size);
        matmul_into(&normed, n, h, self.weights.lm_head.as_slice(), cfg.vocab_size, logits.as_mut_slice());
        Ok(logits)
    }

    fn apply_rope(&self, row: &mut [f32], pos: usize) {
        let hd = self.config.head_dim();
        let half = hd / 2;
        let cos = &self.rope_cos[pos * half..(pos + 1) * half];
        let sin = &self.rope_sin[pos * half..(pos + 1) * half];
        for head in row.chunks_exact_mut(hd) {
            for i in 0..half {
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * cos[i] - b * sin[i];
                head[2 * i + 1] = a * sin[i] + b * cos[i];
            }
        }
    }

    /// Causal multi-head attention of `q` (rows at positions `start..`) over cached keys/values.
    fn attend(&self, q: &[f32], keys: &[f32], values: &[f32], start: usize, out: &mut [f32]) {
        let h = self.config.hidden_size;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut scores: Vec<f64> = Vec::with_capacity(start + q.len() / h);
        let mut acc = vec![0.0f64; hd];
        for (r, (q_row, o_row)) in q.chunks_exact(h).zip(out.chunks_exact_mut(h)).enumerate() {
            let visible = start + r + 1;
            for head in 0..self.config.num_heads {
                let off = head * hd;
                let qh = &q_row[off..off + hd];
                scores.clear();
                let mut max = f64::NEG_INFINITY;
                for t in 0..visible {
                    let kh = &keys[t * h + off..t * h + off + hd];
                    let dot: f64 = qh.iter().zip(kh).map(|(&a, &b)| a as f64 * b as f64).sum();
                    let s = dot * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut denom = 0.0f64;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                acc.fill(0.0);
                for (t, &w) in scores.iter().enumerate() {
                    let vh = &values[t * h + off..t * h + off + hd];
                    for (a, &b) in acc.iter_mut().zip(vh) {
                        *a += w * b as f64;
                    }
                }
                for (o, a) in o_row[off..off + hd].iter_mut().zip(&acc) {
                    *o = (a / denom) as f32;
                }
            }
        }
    }
}
