use std::path::PathBuf;

use asd_core::model::flops_per_token;
use asd_core::modelio::PromptRecord;
use asd_core::{generate, AblationMode, DraftSpec, GenerationConfig, Model};
use serde::Serialize;

use crate::generate::DecodeOptions;
use crate::{load_model, mean, median, tokenizer, CliError, PromptSource};

#[derive(Debug, Clone)]
pub struct AblateOptions {
    pub model: PathBuf,
    pub prompts: PromptSource,
    pub decode: DecodeOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: &'static str,
    pub label: &'static str,
    /// Accepted over proposed drafts, pooled across prompts.
    pub acceptance_rate: Option<f64>,
    pub draft_proposed: usize,
    pub draft_accepted: usize,
    /// Mean over prompts of the analytic per-token FLOPs of each prompt's draft.
    pub draft_flops_per_token: f64,
    pub draft_flops_per_token_by_prompt: Vec<u64>,
    pub median_speedup: f64,
    /// Draft spec chosen for each prompt, in prompt order.
    pub specs: Vec<DraftSpec>,
    /// At temperature 0, whether every prompt matched plain decoding.
    pub outputs_match: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub temperature: f32,
    pub prompts: usize,
    pub full_flops_per_token: u64,
    pub rows: Vec<AblationRow>,
}

pub fn run(opts: &AblateOptions) -> Result<AblationReport, CliError> {
    opts.decode.validate()?;
    let model = load_model(&opts.model)?;
    let records = opts.prompts.load()?;
    run_with_model(&model, &records, &opts.decode)
}

pub fn run_with_model(model: &Model, records: &[PromptRecord], decode: &DecodeOptions) -> Result<AblationReport, CliError> {
    let tok = tokenizer(model)?;
    let cfg = model.config();
    let config = |record: &PromptRecord, mode: Option<AblationMode>| GenerationConfig {
        speculative: mode.is_some(),
        draft_override: None,
        ablation_mode: mode.unwrap_or_default(),
        ..decode.config_for(record, mode.is_some())
    };

    let mut rows: Vec<(Vec<f64>, AblationRow)> = AblationMode::ALL
        .iter()
        .map(|&mode| {
            let row = AblationRow {
                mode: mode.key(),
                label: mode.label(),
                acceptance_rate: None,
                draft_proposed: 0,
                draft_accepted: 0,
                draft_flops_per_token: 0.0,
                draft_flops_per_token_by_prompt: Vec::new(),
                median_speedup: 0.0,
                specs: Vec::new(),
                outputs_match: (decode.temperature == 0.0).then_some(true),
            };
            (Vec::new(), row)
        })
        .collect();

    for record in records {
        let prompt = tok.tokenize(record.text.as_bytes());
        let fail = |e: asd_core::SpecError| CliError::Generation(format!("prompt {}: {e}", record.id));
        let base = generate(model, &prompt, &config(record, None)).map_err(fail)?;
        for (&mode, (speedups, row)) in AblationMode::ALL.iter().zip(rows.iter_mut()) {
            let out = generate(model, &prompt, &config(record, Some(mode))).map_err(fail)?;
            speedups.push(out.metrics.tokens_per_sec / base.metrics.tokens_per_sec);
            row.draft_proposed += out.metrics.draft_proposed;
            row.draft_accepted += out.metrics.draft_accepted;
            row.draft_flops_per_token_by_prompt.push(flops_per_token(cfg, &out.draft_spec));
            if let Some(m) = row.outputs_match.as_mut() {
                *m &= out.tokens == base.tokens;
            }
            row.specs.push(out.draft_spec);
        }
    }

    let rows = rows
        .into_iter()
        .map(|(speedups, mut row)| {
            row.acceptance_rate =
                (row.draft_proposed > 0).then(|| row.draft_accepted as f64 / row.draft_proposed as f64);
            let flops: Vec<f64> = row.draft_flops_per_token_by_prompt.iter().map(|&f| f as f64).collect();
            row.draft_flops_per_token = mean(&flops).unwrap_or(0.0);
            row.median_speedup = median(&speedups).unwrap_or(0.0);
            row
        })
        .collect();
    Ok(AblationReport {
        temperature: decode.temperature,
        prompts: records.len(),
        full_flops_per_token: flops_per_token(cfg, &DraftSpec::full()),
        rows,
    })
}
