//! Dense single-precision kernels used by the decoder.
//!
//! Everything here is a pure function over caller-owned buffers. Reductions
//! (norms, softmax denominators, cosine similarity) accumulate in `f64`;
//! matrix products accumulate in `f32` in a fixed order so that the result
//! for a given row never depends on how many rows are multiplied together.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input to {0}")]
    Empty(&'static str),
}

/// Row-major `rows x cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols != b.rows {
        return Err(TensorError::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(&a.data, a.rows, a.cols, &b.data, b.cols, &mut out.data);
    Ok(out)
}

const TILE: usize = 32;
const ROW_BLOCK: usize = 4;

/// `out[n x m] = x[n x k] * w[k x m]`, overwriting `out`.
///
/// Walks `w` one `TILE`-column strip at a time and runs every block of up to
/// `ROW_BLOCK` input rows against it while the strip is hot in cache. Every
/// output element is `sum_i x[r][i] * w[i][j]` accumulated in order
/// `i = 0..k`, whatever the block shape, so a row's result is bit-identical
/// however many rows are multiplied together.
pub(crate) fn matmul_into(x: &[f32], n: usize, k: usize, w: &[f32], m: usize, out: &mut [f32]) {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    let tiled = m - m % TILE;
    for j0 in (0..tiled).step_by(TILE) {
        let mut r0 = 0;
        while r0 < n {
            let rows = (n - r0).min(ROW_BLOCK);
            match rows {
                8 => tile_kernel::<8>(x, k, r0, w, m, j0, out),
                7 => tile_kernel::<7>(x, k, r0, w, m, j0, out),
                6 => tile_kernel::<6>(x, k, r0, w, m, j0, out),
                5 => tile_kernel::<5>(x, k, r0, w, m, j0, out),
                4 => tile_kernel::<4>(x, k, r0, w, m, j0, out),
                3 => tile_kernel::<3>(x, k, r0, w, m, j0, out),
                2 => tile_kernel::<2>(x, k, r0, w, m, j0, out),
                _ => tile_kernel::<1>(x, k, r0, w, m, j0, out),
            }
            r0 += rows;
        }
    }
    for r in 0..n {
        for j in tiled..m {
            let mut acc = 0.0f32;
            for i in 0..k {
                acc = x[r * k + i].mul_add(w[i * m + j], acc);
            }
            out[r * m + j] = acc;
        }
    }
}

#[inline(always)]
fn tile_kernel<const R: usize>(x: &[f32], k: usize, r0: usize, w: &[f32], m: usize, j0: usize, out: &mut [f32]) {
    let mut acc = [[0.0f32; TILE]; R];
    let xs: [&[f32]; R] = std::array::from_fn(|r| &x[(r0 + r) * k..(r0 + r + 1) * k]);
    for i in 0..k {
        let wt: &[f32; TILE] = w[i * m + j0..i * m + j0 + TILE].try_into().unwrap();
        for r in 0..R {
            let xv = xs[r][i];
            for (a, &wv) in acc[r].iter_mut().zip(wt) {
                *a = xv.mul_add(wv, *a);
            }
        }
    }
    for (r, a) in acc.iter().enumerate() {
        out[(r0 + r) * m + j0..(r0 + r) * m + j0 + TILE].copy_from_slice(a);
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f32]) -> Result<usize, TensorError> {
    let mut best = values.first().ok_or(TensorError::Empty("argmax"))?;
    let mut best_idx = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    Ok(best_idx)
}

/// Temperature softmax. `temperature == 0` yields the one-hot argmax.
pub fn row_softmax(logits: &[f32], temperature: f32) -> Result<Vec<f32>, TensorError> {
    if logits.is_empty() {
        return Err(TensorError::Empty("row_softmax"));
    }
    if temperature.is_nan() || temperature < 0.0 {
        return Err(TensorError::Shape(format!(
            "temperature must be >= 0, got {temperature}"
        )));
    }
    let mut out = vec![0.0f32; logits.len()];
    if temperature == 0.0 {
        out[argmax(logits)?] = 1.0;
        return Ok(out);
    }
    let inv_t = 1.0 / temperature as f64;
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let mut exps = Vec::with_capacity(logits.len());
    let mut sum = 0.0f64;
    for &v in logits {
        let e = ((v as f64 - max) * inv_t).exp();
        sum += e;
        exps.push(e);
    }
    for (o, e) in out.iter_mut().zip(exps) {
        *o = (e / sum) as f32;
    }
    Ok(out)
}

/// Cosine similarity, or `None` when either input has zero norm.
pub fn cosine_sim_checked(x: &[f32], y: &[f32]) -> Result<Option<f64>, TensorError> {
    if x.len() != y.len() {
        return Err(TensorError::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Ok(None);
    }
    // sqrt(n * n) == n exactly, so identical inputs give exactly 1
    Ok(Some((dot / (nx * ny).sqrt()).clamp(-1.0, 1.0)))
}

/// Cosine similarity clamped to `[-1, 1]`; zero-norm inputs give 0.
pub fn cosine_sim(x: &[f32], y: &[f32]) -> Result<f64, TensorError> {
    Ok(cosine_sim_checked(x, y)?.unwrap_or(0.0))
}

pub fn rms_norm(x: &[f32], gain: &[f32], eps: f32) -> Result<Vec<f32>, TensorError> {
    if x.len() != gain.len() {
        return Err(TensorError::Shape(format!(
            "rms_norm input {} vs gain {}",
            x.len(),
            gain.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    rms_norm_into(x, gain, eps, &mut out);
    Ok(out)
}

pub(crate) fn rms_norm_into(x: &[f32], gain: &[f32], eps: f32, out: &mut [f32]) {
    if x.is_empty() {
        return;
    }
    let mean_sq = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64;
    let scale = 1.0 / (mean_sq + eps as f64).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = ((v as f64) * scale) as f32 * g;
    }
}

pub fn silu(v: f32) -> f32 {
    v / (1.0 + (-v).exp())
}
