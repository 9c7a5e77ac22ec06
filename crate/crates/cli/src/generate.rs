use std::path::PathBuf;

use asd_core::modelio::PromptRecord;
use asd_core::{generate, AdmgParams, DraftSpec, GenerationConfig, Model, RunMetrics};
use serde::Serialize;

use crate::{load_model, tokenizer, CliError, PromptSource};

/// Decoding knobs shared by `generate`, `bench` and `ablate`.
#[derive(Debug, Clone)]
pub struct DecodeOptions {
    pub temperature: f32,
    pub admg: AdmgParams,
    /// Default budget for prompts that do not set their own.
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Draft with the whole model instead of an ADMG subnetwork.
    pub draft_full: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { temperature: 0.0, admg: AdmgParams::default(), max_new_tokens: 64, seed: 0, draft_full: false }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<(), CliError> {
        self.admg.validate().map_err(|e| CliError::Input(e.to_string()))?;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(CliError::Input(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_new_tokens == 0 {
            return Err(CliError::Input("max-new-tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn config_for(&self, record: &PromptRecord, speculative: bool) -> GenerationConfig {
        GenerationConfig {
            temperature: self.temperature,
            max_new_tokens: record.max_new_tokens.unwrap_or(self.max_new_tokens),
            seed: self.seed,
            admg: self.admg,
            speculative,
            draft_override: self.draft_full.then(DraftSpec::full),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub model: PathBuf,
    pub prompts: PromptSource,
    pub decode: DecodeOptions,
    pub speculative: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateRun {
    pub id: String,
    pub text: String,
    pub tokens: Vec<u32>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    pub speculative: bool,
    pub runs: Vec<GenerateRun>,
}

pub fn run(opts: &GenerateOptions) -> Result<GenerateReport, CliError> {
    opts.decode.validate()?;
    let model = load_model(&opts.model)?;
    let records = opts.prompts.load()?;
    run_with_model(&model, &records, &opts.decode, opts.speculative)
}

pub fn run_with_model(
    model: &Model,
    records: &[PromptRecord],
    decode: &DecodeOptions,
    speculative: bool,
) -> Result<GenerateReport, CliError> {
    let tok = tokenizer(model)?;
    let mut runs = Vec::with_capacity(records.len());
    for record in records {
        let prompt = tok.tokenize(record.text.as_bytes());
        let out = generate(model, &prompt, &decode.config_for(record, speculative))
            .map_err(|e| CliError::Generation(format!("prompt {}: {e}", record.id)))?;
        let decoded = tok.detokenize(&out.tokens);
        runs.push(GenerateRun {
            id: record.id.clone(),
            text: decoded.to_string_lossy(),
            tokens: out.tokens,
            metrics: out.metrics,
        });
    }
    Ok(GenerateReport { speculative, runs })
}
