use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{LayerTimesMs, RunMetrics};
use super::policy::DraftExitPolicy;
use super::rng::SessionRng;
use super::verify::{verify_greedy, verify_sampling, VerificationOutcome};
use super::SpecError;
use crate::admg::{generate_ablation_spec, AblationMode, AcsStats, AdmgParams};
use crate::model::{DraftSpec, KvCache, LayerTimings, Model, ResidualTap, Sublayer};
use crate::tensor::{argmax, row_softmax, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f32,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub draft_exit: DraftExitPolicy,
    pub admg: AdmgParams,
    pub ablation_mode: AblationMode,
    /// Off runs plain autoregressive decoding with the full model.
    pub speculative: bool,
    /// Use this spec instead of deriving one from prefill statistics.
    pub draft_override: Option<DraftSpec>,
    /// Record per-layer wall time of full-model forwards.
    pub instrument_layers: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 64,
            seed: 0,
            draft_exit: DraftExitPolicy::default(),
            admg: AdmgParams::default(),
            ablation_mode: AblationMode::Full,
            speculative: true,
            draft_override: None,
            instrument_layers: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    /// New tokens only, ending with EOS if the model produced it.
    pub tokens: Vec<u32>,
    pub metrics: RunMetrics,
    /// The draft subnetwork used (the full model when not speculative).
    pub draft_spec: DraftSpec,
    /// Attention ACS from prefill; empty when not speculative.
    pub acs: Vec<f64>,
    /// The full model's cache: prompt plus every new token except the last.
    pub target_cache: KvCache,
}

/// A token proposed by the draft subnetwork.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftToken {
    pub token: u32,
    /// Probability of `token`, used for draft exit. At temperature 0 this is
    /// its softmax probability at temperature 1, as the sampling
    /// distribution is one-hot.
    pub prob: f64,
    /// The distribution `token` was drawn from.
    pub dist: Vec<f32>,
}

/// One decode step of the draft subnetwork on `last_token`.
pub fn draft_step(
    model: &Model,
    cache: &mut KvCache,
    spec: &DraftSpec,
    last_token: u32,
    temperature: f32,
    rng: &mut SessionRng,
) -> Result<DraftToken, SpecError> {
    let logits = model.forward(&[last_token], cache, spec, None)?;
    let row = logits.row(0);
    let (token, dist) = pick(row, temperature, rng)?;
    let prob = if temperature == 0.0 {
        row_softmax(row, 1.0)?[token as usize] as f64
    } else {
        dist[token as usize] as f64
    };
    Ok(DraftToken { token, prob, dist })
}

/// Argmax at temperature 0, otherwise a sample from the tempered softmax.
fn pick(row: &[f32], temperature: f32, rng: &mut SessionRng) -> Result<(u32, Vec<f32>), SpecError> {
    let dist = row_softmax(row, temperature)?;
    let token = if temperature == 0.0 { argmax(row)? } else { rng.sample(&dist) };
    Ok((token as u32, dist))
}

struct Forwarder<'a> {
    model: &'a Model,
    timings: Option<LayerTimings>,
}

impl Forwarder<'_> {
    fn run(
        &mut self,
        tokens: &[u32],
        cache: &mut KvCache,
        tap: Option<&mut dyn ResidualTap>,
    ) -> Result<Matrix, SpecError> {
        Ok(self.model.forward_timed(tokens, cache, &DraftSpec::full(), tap, self.timings.as_mut())?)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Generates up to `config.max_new_tokens` tokens after `prompt`.
///
/// Speculative mode: prefill the prompt through the full model while
/// collecting attention ACS, derive the draft spec, then alternate drafting
/// with the subnetwork and verifying with one parallel full-model forward
/// over `[last token, drafts...]`.
pub fn generate(model: &Model, prompt: &[u32], config: &GenerationConfig) -> Result<GenerationOutput, SpecError> {
    let cfg = model.config();
    if prompt.is_empty() {
        return Err(SpecError::EmptyPrompt);
    }
    if config.max_new_tokens < 1 {
        return Err(SpecError::Config("max_new_tokens must be >= 1".into()));
    }
    if !(config.temperature >= 0.0 && config.temperature.is_finite()) {
        return Err(SpecError::Config(format!("temperature {} must be >= 0", config.temperature)));
    }
    config.draft_exit.validate().map_err(SpecError::Config)?;
    let needed = prompt.len() + config.max_new_tokens;
    if needed > cfg.max_seq_len {
        return Err(SpecError::Capacity { needed, capacity: cfg.max_seq_len });
    }

    let start = Instant::now();
    let temperature = config.temperature;
    let mut rng = SessionRng::new(config.seed);
    let mut metrics = RunMetrics::default();
    let mut fwd = Forwarder {
        model,
        timings: config.instrument_layers.then(|| LayerTimings::new(cfg.num_layers)),
    };
    let is_eos = |t: u32| cfg.eos_token == Some(t);

    let mut target_cache = model.new_cache();
    let mut acs = AcsStats::new(cfg.num_layers);
    let t0 = Instant::now();
    let tap: Option<&mut dyn ResidualTap> = if config.speculative { Some(&mut acs) } else { None };
    let logits = fwd.run(prompt, &mut target_cache, tap)?;
    let (first, _) = pick(logits.row(prompt.len() - 1), temperature, &mut rng)?;
    metrics.wall_ms_prefill = ms_since(t0);
    let mut out = vec![first];

    let spec = if !config.speculative {
        DraftSpec::full()
    } else if let Some(s) = &config.draft_override {
        s.check_layers(cfg.num_layers)?;
        s.clone()
    } else {
        generate_ablation_spec(&acs.values(), &config.admg, cfg.num_layers, config.ablation_mode)?
    };

    if !config.speculative {
        let t0 = Instant::now();
        while out.len() < config.max_new_tokens && !is_eos(*out.last().unwrap()) {
            let logits = fwd.run(&[*out.last().unwrap()], &mut target_cache, None)?;
            out.push(pick(logits.row(0), temperature, &mut rng)?.0);
            metrics.rounds += 1;
        }
        metrics.wall_ms_verify = ms_since(t0);
    } else if !is_eos(first) {
        let retained = |l: usize| !spec.removes_attn(l);
        let mut draft_cache = model.new_cache();
        draft_cache.sync_from(&target_cache, 0, prompt.len(), retained)?;
        let mut policy = config.draft_exit.clone();
        let mut drafts: Vec<u32> = Vec::with_capacity(policy.max_draft_len);
        let mut draft_dists: Vec<Vec<f32>> = Vec::with_capacity(policy.max_draft_len);

        while out.len() < config.max_new_tokens {
            let last = *out.last().unwrap();
            let base = target_cache.len();
            let budget = (config.max_new_tokens - out.len() - 1).min(policy.max_draft_len);

            let t0 = Instant::now();
            drafts.clear();
            draft_dists.clear();
            let mut cur = last;
            while drafts.len() < budget {
                let d = draft_step(model, &mut draft_cache, &spec, cur, temperature, &mut rng)?;
                drafts.push(d.token);
                draft_dists.push(d.dist);
                cur = d.token;
                if policy.should_exit(d.prob, drafts.len()) {
                    break;
                }
            }
            metrics.wall_ms_draft += ms_since(t0);

            let t0 = Instant::now();
            let mut input = Vec::with_capacity(drafts.len() + 1);
            input.push(last);
            input.extend_from_slice(&drafts);
            let logits = fwd.run(&input, &mut target_cache, None)?;
            let outcome = if drafts.is_empty() {
                let (token, _) = pick(logits.row(0), temperature, &mut rng)?;
                VerificationOutcome { num_accepted: 0, token, bonus: true }
            } else if temperature == 0.0 {
                verify_greedy(&drafts, &logits)?
            } else {
                let targets = (0..logits.rows())
                    .map(|r| row_softmax(logits.row(r), temperature))
                    .collect::<Result<Vec<_>, _>>()?;
                verify_sampling(&drafts, &draft_dists, &targets, &mut rng)?
            };
            let accepted = outcome.num_accepted;
            target_cache.truncate(base + 1 + accepted)?;
            draft_cache.sync_from(&target_cache, base, base + 1 + accepted, retained)?;
            metrics.wall_ms_verify += ms_since(t0);

            metrics.rounds += 1;
            metrics.draft_proposed += drafts.len();
            metrics.draft_accepted += accepted;
            if !drafts.is_empty() {
                policy.update_threshold(accepted as f64 / drafts.len() as f64);
            }

            let mut stop = false;
            for &t in drafts[..accepted].iter().chain(std::iter::once(&outcome.token)) {
                out.push(t);
                if is_eos(t) {
                    stop = true;
                    break;
                }
            }
            if stop {
                break;
            }
        }
        // an EOS inside the accepted drafts leaves extra positions behind it
        target_cache.truncate(prompt.len() + out.len() - 1)?;
    }

    metrics.tokens_generated = out.len();
    if config.speculative {
        metrics.draft_spec = Some(spec.clone());
        metrics.acs = Some(acs.values());
    }
    if let Some(t) = &fwd.timings {
        metrics.layer_time_ms =
            Some(LayerTimesMs { attention: t.mean_ms(Sublayer::Attention), mlp: t.mean_ms(Sublayer::Mlp) });
    }
    metrics.finish(ms_since(start));
    Ok(GenerationOutput {
        tokens: out,
        metrics,
        draft_spec: spec,
        acs: if config.speculative { acs.values() } else { Vec::new() },
        target_cache,
    })
}
