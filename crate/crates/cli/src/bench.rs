use std::path::PathBuf;

use asd_core::modelio::PromptRecord;
use asd_core::{generate, GenerationOutput, Model, RunMetrics};
use log::info;
use serde::Serialize;

use crate::generate::DecodeOptions;
use crate::{load_model, mean, median, tokenizer, CliError, PromptSource};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub model: PathBuf,
    pub prompts: PromptSource,
    pub decode: DecodeOptions,
    pub repeat: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchPrompt {
    pub id: String,
    pub prompt_tokens: usize,
    /// Metrics of the first repeat of each mode.
    pub baseline: RunMetrics,
    pub speculative: RunMetrics,
    /// Median over repeats.
    pub baseline_tokens_per_sec: f64,
    pub speculative_tokens_per_sec: f64,
    pub speedup: f64,
    /// Whether both modes produced the same tokens; only reported at temperature 0.
    pub outputs_match: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchAggregate {
    pub prompts: usize,
    pub mean_baseline_tokens_per_sec: f64,
    pub median_baseline_tokens_per_sec: f64,
    pub mean_speculative_tokens_per_sec: f64,
    pub median_speculative_tokens_per_sec: f64,
    pub mean_speedup: f64,
    pub median_speedup: f64,
    /// Accepted over proposed drafts, pooled across prompts.
    pub acceptance_rate: Option<f64>,
    pub median_acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub temperature: f32,
    pub repeat: usize,
    pub per_prompt: Vec<BenchPrompt>,
    pub aggregate: BenchAggregate,
}

pub fn run(opts: &BenchOptions) -> Result<BenchReport, CliError> {
    opts.decode.validate()?;
    let model = load_model(&opts.model)?;
    let records = opts.prompts.load()?;
    run_with_model(&model, &records, &opts.decode, opts.repeat)
}

fn timed(model: &Model, prompt: &[u32], record: &PromptRecord, decode: &DecodeOptions, speculative: bool) -> Result<GenerationOutput, CliError> {
    generate(model, prompt, &decode.config_for(record, speculative))
        .map_err(|e| CliError::Generation(format!("prompt {}: {e}", record.id)))
}

pub fn run_with_model(
    model: &Model,
    records: &[PromptRecord],
    decode: &DecodeOptions,
    repeat: usize,
) -> Result<BenchReport, CliError> {
    if repeat == 0 {
        return Err(CliError::Input("repeat must be >= 1".into()));
    }
    let tok = tokenizer(model)?;
    let prompts: Vec<Vec<u32>> = records.iter().map(|r| tok.tokenize(r.text.as_bytes())).collect();

    // warm caches and page in the weights before anything is timed
    timed(model, &prompts[0], &records[0], decode, false)?;
    timed(model, &prompts[0], &records[0], decode, true)?;

    let mut per_prompt = Vec::with_capacity(records.len());
    for (record, prompt) in records.iter().zip(&prompts) {
        let mut base_tps = Vec::with_capacity(repeat);
        let mut spec_tps = Vec::with_capacity(repeat);
        let mut first: Option<(GenerationOutput, GenerationOutput)> = None;
        for _ in 0..repeat {
            // alternate modes so clock drift hits both equally
            let base = timed(model, prompt, record, decode, false)?;
            let spec = timed(model, prompt, record, decode, true)?;
            base_tps.push(base.metrics.tokens_per_sec);
            spec_tps.push(spec.metrics.tokens_per_sec);
            first.get_or_insert((base, spec));
        }
        let (base, mut spec) = first.expect("repeat >= 1");
        let baseline_tokens_per_sec = median(&base_tps).unwrap_or(0.0);
        let speculative_tokens_per_sec = median(&spec_tps).unwrap_or(0.0);
        let speedup = speculative_tokens_per_sec / baseline_tokens_per_sec;
        spec.metrics.speedup_vs_baseline = Some(speedup);
        info!("{}: speedup {speedup:.3}, acceptance {:?}", record.id, spec.metrics.acceptance_rate);
        per_prompt.push(BenchPrompt {
            id: record.id.clone(),
            prompt_tokens: prompt.len(),
            outputs_match: (decode.temperature == 0.0).then(|| base.tokens == spec.tokens),
            baseline: base.metrics,
            speculative: spec.metrics,
            baseline_tokens_per_sec,
            speculative_tokens_per_sec,
            speedup,
        });
    }
    let aggregate = aggregate(&per_prompt);
    Ok(BenchReport { temperature: decode.temperature, repeat, per_prompt, aggregate })
}

fn aggregate(rows: &[BenchPrompt]) -> BenchAggregate {
    let base: Vec<f64> = rows.iter().map(|r| r.baseline_tokens_per_sec).collect();
    let spec: Vec<f64> = rows.iter().map(|r| r.speculative_tokens_per_sec).collect();
    let speedups: Vec<f64> = rows.iter().map(|r| r.speedup).collect();
    let rates: Vec<f64> = rows.iter().filter_map(|r| r.speculative.acceptance_rate).collect();
    let proposed: usize = rows.iter().map(|r| r.speculative.draft_proposed).sum();
    let accepted: usize = rows.iter().map(|r| r.speculative.draft_accepted).sum();
    BenchAggregate {
        prompts: rows.len(),
        mean_baseline_tokens_per_sec: mean(&base).unwrap_or(0.0),
        median_baseline_tokens_per_sec: median(&base).unwrap_or(0.0),
        mean_speculative_tokens_per_sec: mean(&spec).unwrap_or(0.0),
        median_speculative_tokens_per_sec: median(&spec).unwrap_or(0.0),
        mean_speedup: mean(&speedups).unwrap_or(0.0),
        median_speedup: median(&speedups).unwrap_or(0.0),
        acceptance_rate: (proposed > 0).then(|| accepted as f64 / proposed as f64),
        median_acceptance_rate: median(&rates),
    }
}
