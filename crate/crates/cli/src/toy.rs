use std::path::PathBuf;

use asd_core::modelio::{make_redundant_model, make_toy_model, save_checkpoint, zero_attention_outputs};
use asd_core::ModelConfig;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ToyOptions {
    pub config: ModelConfig,
    pub seed: u64,
    pub out: PathBuf,
    /// Build adjacent duplicate middle layers whose residual updates are
    /// scaled by this factor.
    pub redundant_scale: Option<f32>,
    /// Zero every attention output projection.
    pub zero_attention_output: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyReport {
    pub path: PathBuf,
    pub config: ModelConfig,
    pub parameters: usize,
    pub bytes: u64,
}

pub fn run(opts: &ToyOptions) -> Result<ToyReport, CliError> {
    opts.config.validate().map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(s) = opts.redundant_scale {
        if !s.is_finite() {
            return Err(CliError::Input(format!("redundant scale {s} must be finite")));
        }
    }
    let mut weights = match opts.redundant_scale {
        Some(s) => make_redundant_model(&opts.config, opts.seed, s),
        None => make_toy_model(&opts.config, opts.seed),
    };
    if opts.zero_attention_output {
        zero_attention_outputs(&mut weights);
    }
    save_checkpoint(&weights, &opts.config, &opts.out).map_err(|e| CliError::Output {
        path: opts.out.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let bytes = std::fs::metadata(&opts.out).map(|m| m.len()).unwrap_or(0);
    let parameters = weights.tensors().iter().map(|(d, _)| d.len()).sum();
    Ok(ToyReport { path: opts.out.clone(), config: opts.config.clone(), parameters, bytes })
}
