//! Adaptive draft model generation.
//!
//! During prefill, every attention sub-block's input/output hidden states
//! are compared token by token; the per-layer mean cosine similarity (ACS)
//! estimates how little the layer changes the residual stream. The draft
//! spec then removes:
//!
//! * every attention layer with `ACS >= alpha` (CS thresholding),
//! * every `m`-th layer's attention and MLP (rule 1),
//! * but never any of the last `n` layers (rule 2).

use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DraftSpec, ResidualTap, Sublayer};
use crate::tensor::cosine_sim_checked;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmgError {
    #[error("layer {layer} outside 1..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("hidden state lengths differ: {0} vs {1}")]
    Shape(usize, usize),
    #[error("similarity vector has {got} entries for {want} layers")]
    Length { got: usize, want: usize },
    #[error("layer {0} has no accumulated tokens")]
    EmptyLayer(usize),
    #[error("no layers to summarize")]
    Empty,
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Running per-layer mean cosine similarity of one sub-block kind.
#[derive(Debug, Clone, PartialEq)]
pub struct AcsStats {
    sums: Vec<f64>,
    counts: Vec<u64>,
    degenerate: Vec<u64>,
}

impl AcsStats {
    pub fn new(num_layers: usize) -> Self {
        Self {
            sums: vec![0.0; num_layers],
            counts: vec![0; num_layers],
            degenerate: vec![0; num_layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.sums.len()
    }

    /// Adds one token's `(before, after)` pair for a 1-based layer.
    /// A zero-norm pair contributes similarity 0 and is counted as degenerate.
    pub fn accumulate(&mut self, layer: usize, before: &[f32], after: &[f32]) -> Result<(), AdmgError> {
        if layer == 0 || layer > self.sums.len() {
            return Err(AdmgError::LayerOutOfRange { layer, num_layers: self.sums.len() });
        }
        let cs = cosine_sim_checked(before, after).map_err(|_| AdmgError::Shape(before.len(), after.len()))?;
        let idx = layer - 1;
        match cs {
            Some(v) => self.sums[idx] += v,
            None => self.degenerate[idx] += 1,
        }
        self.counts[idx] += 1;
        Ok(())
    }

    pub fn token_count(&self, layer: usize) -> u64 {
        self.counts[layer - 1]
    }

    /// Zero-norm observations per layer.
    pub fn degenerate_count(&self, layer: usize) -> u64 {
        self.degenerate[layer - 1]
    }

    /// `C_l` for a 1-based layer, or `None` if nothing was accumulated.
    pub fn mean(&self, layer: usize) -> Option<f64> {
        let idx = layer - 1;
        (self.counts[idx] > 0).then(|| self.sums[idx] / self.counts[idx] as f64)
    }

    /// The ACS vector; layers without data read as -1 so they are never removed.
    pub fn values(&self) -> Vec<f64> {
        (1..=self.num_layers()).map(|l| self.mean(l).unwrap_or(-1.0)).collect()
    }
}

impl ResidualTap for AcsStats {
    fn observe(&mut self, sublayer: Sublayer, layer: usize, before: &[f32], after: &[f32]) {
        if sublayer == Sublayer::Attention {
            if let Err(e) = self.accumulate(layer, before, after) {
                warn!("acs tap: {e}");
            }
        }
    }
}

/// ACS for both sub-block kinds, for layer statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAcs {
    pub attention: AcsStats,
    pub mlp: AcsStats,
}

impl LayerAcs {
    pub fn new(num_layers: usize) -> Self {
        Self { attention: AcsStats::new(num_layers), mlp: AcsStats::new(num_layers) }
    }
}

impl ResidualTap for LayerAcs {
    fn observe(&mut self, sublayer: Sublayer, layer: usize, before: &[f32], after: &[f32]) {
        let stats = match sublayer {
            Sublayer::Attention => &mut self.attention,
            Sublayer::Mlp => &mut self.mlp,
        };
        if let Err(e) = stats.accumulate(layer, before, after) {
            warn!("acs tap: {e}");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmgParams {
    /// Similarity threshold for removing attention layers.
    pub alpha: f64,
    /// Period of rule 1.
    pub m: usize,
    /// Number of final layers rule 2 protects.
    pub n: usize,
}

impl Default for AdmgParams {
    fn default() -> Self {
        Self { alpha: 0.985, m: 3, n: 2 }
    }
}

impl AdmgParams {
    pub fn new(alpha: f64, m: usize, n: usize) -> Result<Self, AdmgError> {
        let p = Self { alpha, m, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AdmgError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AdmgError::Params(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.m < 1 {
            return Err(AdmgError::Params("m must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which subset of the generation rules to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    CsOnly,
    CsRule2,
    Rules12,
    #[default]
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [Self::CsOnly, Self::CsRule2, Self::Rules12, Self::Full];

    pub fn label(self) -> &'static str {
        match self {
            Self::CsOnly => "CS thresholding",
            Self::CsRule2 => "CS thresholding & rule 2",
            Self::Rules12 => "Rules 1 & 2",
            Self::Full => "ADMG",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::CsOnly => "cs_only",
            Self::CsRule2 => "cs_rule2",
            Self::Rules12 => "rules12",
            Self::Full => "full",
        }
    }
}

impl FromStr for AblationMode {
    type Err = AdmgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| AdmgError::Params(format!("unknown ablation mode {s:?}")))
    }
}

/// The draft spec for an ACS vector `c` (index 0 is layer 1).
pub fn generate_draft_spec(c: &[f64], params: &AdmgParams, num_layers: usize) -> Result<DraftSpec, AdmgError> {
    generate_ablation_spec(c, params, num_layers, AblationMode::Full)
}

pub fn generate_ablation_spec(
    c: &[f64],
    params: &AdmgParams,
    num_layers: usize,
    mode: AblationMode,
) -> Result<DraftSpec, AdmgError> {
    if c.len() != num_layers {
        return Err(AdmgError::Length { got: c.len(), want: num_layers });
    }
    let limit = match mode {
        AblationMode::CsOnly => num_layers,
        _ => num_layers.saturating_sub(params.n),
    };
    let thresholded = (1..=limit).filter(|&l| c[l - 1] >= params.alpha);
    let periodic: Vec<usize> = if params.m == 0 {
        Vec::new()
    } else {
        (1..=limit).filter(|l| l % params.m == 0).collect()
    };
    let spec = match mode {
        AblationMode::CsOnly | AblationMode::CsRule2 => DraftSpec::new(thresholded, []),
        AblationMode::Rules12 => DraftSpec::new(periodic.iter().copied(), periodic.iter().copied()),
        AblationMode::Full => DraftSpec::new(thresholded.chain(periodic.iter().copied()), periodic.iter().copied()),
    };
    Ok(spec.expect("removed MLP layers are always a subset of removed attention layers"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub min_acs: f64,
    pub max_acs: f64,
    pub mean_acs: f64,
    pub median_acs: f64,
    pub mean_time_ms: f64,
    pub acs_per_layer: Vec<f64>,
    pub time_ms_per_layer: Vec<f64>,
}

/// Min/max/mean/median ACS and mean compute time per sub-block kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStatsReport {
    pub attention: KindStats,
    pub mlp: KindStats,
    /// Mean attention time over mean MLP time, when both are positive.
    pub attention_to_mlp_time_ratio: Option<f64>,
}

fn kind_stats(stats: &AcsStats, times_ms: &[f64]) -> Result<KindStats, AdmgError> {
    if stats.num_layers() == 0 {
        return Err(AdmgError::Empty);
    }
    let mut values = Vec::with_capacity(stats.num_layers());
    for l in 1..=stats.num_layers() {
        values.push(stats.mean(l).ok_or(AdmgError::EmptyLayer(l))?);
    }
    let summary = summarize(&values).ok_or(AdmgError::Empty)?;
    let mean_time_ms = if times_ms.is_empty() { 0.0 } else { times_ms.iter().sum::<f64>() / times_ms.len() as f64 };
    Ok(KindStats {
        min_acs: summary.min,
        max_acs: summary.max,
        mean_acs: summary.mean,
        median_acs: summary.median,
        mean_time_ms,
        acs_per_layer: values,
        time_ms_per_layer: times_ms.to_vec(),
    })
}

pub fn layer_stats(acs: &LayerAcs, attn_times_ms: &[f64], mlp_times_ms: &[f64]) -> Result<LayerStatsReport, AdmgError> {
    let attention = kind_stats(&acs.attention, attn_times_ms)?;
    let mlp = kind_stats(&acs.mlp, mlp_times_ms)?;
    let ratio = (attention.mean_time_ms > 0.0 && mlp.mean_time_ms > 0.0)
        .then(|| attention.mean_time_ms / mlp.mean_time_ms);
    Ok(LayerStatsReport { attention, mlp, attention_to_mlp_time_ratio: ratio })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

/// Exact order statistics; an even count takes the mean of the two middle values.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    Some(Summary {
        min: sorted[0],
        max: sorted[n - 1],
        mean: sorted.iter().sum::<f64>() / n as f64,
        median,
    })
}
