//! Command implementations behind the `asd` binary.
//!
//! Each command takes a plain options struct and returns a serializable
//! report, so the binary is a thin clap layer and tests can drive the
//! commands directly.

pub mod ablate;
pub mod bench;
pub mod generate;
pub mod stats;
pub mod toy;

use std::path::{Path, PathBuf};

use asd_core::modelio::{load_checkpoint, read_prompts, ByteTokenizer, PromptRecord};
use asd_core::Model;
use log::warn;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad inputs: missing or unreadable model, invalid config, unusable prompts.
    #[error("{0}")]
    Input(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Generation(_) | CliError::Output { .. } => 1,
            CliError::Input(_) => 2,
        }
    }
}

impl From<asd_core::SpecError> for CliError {
    fn from(e: asd_core::SpecError) -> Self {
        CliError::Generation(e.to_string())
    }
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("model file {} does not exist", path.display())));
    }
    let (weights, config) =
        load_checkpoint(path).map_err(|e| CliError::Input(format!("cannot load {}: {e}", path.display())))?;
    Model::new(config, weights).map_err(|e| CliError::Input(format!("invalid model {}: {e}", path.display())))
}

pub fn tokenizer(model: &Model) -> Result<ByteTokenizer, CliError> {
    ByteTokenizer::for_model(model.config()).map_err(|e| CliError::Input(e.to_string()))
}

/// Where prompts come from: a literal string or a JSONL file.
#[derive(Debug, Clone)]
pub enum PromptSource {
    Text(String),
    File(PathBuf),
}

impl PromptSource {
    pub fn load(&self) -> Result<Vec<PromptRecord>, CliError> {
        match self {
            PromptSource::Text(t) => Ok(vec![PromptRecord { id: "prompt".into(), text: t.clone(), max_new_tokens: None }]),
            PromptSource::File(p) => {
                let set = read_prompts(p).map_err(|e| CliError::Input(e.to_string()))?;
                for e in &set.errors {
                    warn!("{}: skipping line {}: {}", p.display(), e.line, e.message);
                }
                if set.records.is_empty() {
                    return Err(CliError::Input(format!("no usable prompts in {}", p.display())));
                }
                Ok(set.records)
            }
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    asd_core::admg::summarize(values).map(|s| s.median)
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
