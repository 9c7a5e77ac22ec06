use std::path::PathBuf;
use std::process::ExitCode;

use asd_cli::ablate::AblateOptions;
use asd_cli::bench::BenchOptions;
use asd_cli::generate::{DecodeOptions, GenerateOptions};
use asd_cli::stats::StatsOptions;
use asd_cli::toy::ToyOptions;
use asd_cli::{ablate, bench, generate, stats, toy, write_json, CliError, PromptSource};
use asd_core::{AdmgParams, ModelConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "asd", version, about = "Adaptive self-speculative decoding on toy transformer checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate text for one prompt or a JSONL prompt file
    Generate(GenerateArgs),
    /// Time plain against speculative decoding per prompt
    Bench(BenchArgs),
    /// Compare the four draft construction rule subsets
    Ablate(AblateArgs),
    /// Per-layer residual similarity and timing over prompt prefills
    Stats(StatsArgs),
    /// Write a seeded random checkpoint
    MakeToyModel(ToyArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct PromptArgs {
    /// Literal prompt text
    #[arg(long)]
    prompt: Option<String>,
    /// JSONL file of {"id", "text", "max_new_tokens"?} records
    #[arg(long)]
    prompts: Option<PathBuf>,
}

impl PromptArgs {
    fn source(self) -> PromptSource {
        match (self.prompt, self.prompts) {
            (Some(t), _) => PromptSource::Text(t),
            (None, Some(p)) => PromptSource::File(p),
            (None, None) => unreachable!("clap requires one prompt argument"),
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 0.0)]
    temperature: f32,
    /// Cosine threshold above which attention layers are skipped in the draft
    #[arg(long, default_value_t = 0.985)]
    alpha: f64,
    /// Skip every m-th layer's attention and MLP
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Never skip the last n layers
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draft with the whole model (skip nothing)
    #[arg(long)]
    draft_full: bool,
}

impl DecodeArgs {
    fn options(&self) -> DecodeOptions {
        DecodeOptions {
            temperature: self.temperature,
            admg: AdmgParams { alpha: self.alpha, m: self.m, n: self.n },
            max_new_tokens: self.max_new_tokens,
            seed: self.seed,
            draft_full: self.draft_full,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Plain autoregressive decoding
    #[arg(long)]
    no_speculative: bool,
    /// Write the per-prompt run metrics here
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    /// Also dump every (before, after) residual pair as JSON lines
    #[arg(long)]
    dump_pairs: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = ModelConfig::default().num_layers)]
    layers: usize,
    #[arg(long, default_value_t = ModelConfig::default().hidden_size)]
    hidden: usize,
    #[arg(long, default_value_t = ModelConfig::default().num_heads)]
    heads: usize,
    #[arg(long, default_value_t = ModelConfig::default().mlp_dim)]
    mlp_dim: usize,
    #[arg(long, default_value_t = ModelConfig::default().vocab_size)]
    vocab: usize,
    #[arg(long, default_value_t = ModelConfig::default().max_seq_len)]
    max_seq: usize,
    /// End-of-sequence token id; defaults to 256 when the vocabulary has room
    #[arg(long)]
    eos: Option<u32>,
    #[arg(long)]
    no_eos: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Make the middle layers adjacent duplicates scaled by this factor
    #[arg(long)]
    redundant_scale: Option<f32>,
    /// Zero every attention output projection
    #[arg(long)]
    zero_attention_output: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

impl ToyArgs {
    fn options(self) -> ToyOptions {
        let eos = match (self.no_eos, self.eos) {
            (true, _) => None,
            (false, Some(e)) => Some(e),
            (false, None) => (self.vocab > 256).then_some(256),
        };
        let config = ModelConfig {
            num_layers: self.layers,
            hidden_size: self.hidden,
            num_heads: self.heads,
            mlp_dim: self.mlp_dim,
            vocab_size: self.vocab,
            max_seq_len: self.max_seq,
            eos_token: eos,
            ..ModelConfig::default()
        };
        ToyOptions {
            config,
            seed: self.seed,
            out: self.out,
            redundant_scale: self.redundant_scale,
            zero_attention_output: self.zero_attention_output,
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => {
            let opts = GenerateOptions {
                model: a.model,
                prompts: a.prompt.source(),
                decode: a.decode.options(),
                speculative: !a.no_speculative,
            };
            let report = generate::run(&opts)?;
            let many = report.runs.len() > 1;
            for run in &report.runs {
                if many {
                    println!("[{}] {}", run.id, run.text);
                } else {
                    println!("{}", run.text);
                }
            }
            if let Some(p) = a.json {
                write_json(&p, &report)?;
            }
        }
        Command::Bench(a) => {
            let opts = BenchOptions {
                model: a.model,
                prompts: PromptSource::File(a.prompts),
                decode: a.decode.options(),
                repeat: a.repeat,
            };
            let report = bench::run(&opts)?;
            for p in &report.per_prompt {
                println!(
                    "{}\tbaseline {:.1} tok/s\tspeculative {:.1} tok/s\tspeedup {:.3}\tacceptance {}",
                    p.id,
                    p.baseline_tokens_per_sec,
                    p.speculative_tokens_per_sec,
                    p.speedup,
                    fmt_rate(p.speculative.acceptance_rate)
                );
            }
            let agg = &report.aggregate;
            println!(
                "median speedup {:.3} over {} prompts, acceptance {}",
                agg.median_speedup,
                agg.prompts,
                fmt_rate(agg.median_acceptance_rate)
            );
            if let Some(p) = a.json {
                write_json(&p, &report)?;
            }
        }
        Command::Ablate(a) => {
            let opts = AblateOptions { model: a.model, prompts: PromptSource::File(a.prompts), decode: a.decode.options() };
            let report = ablate::run(&opts)?;
            println!("{:<26} {:>10} {:>14} {:>8}", "mode", "acceptance", "flops/token", "speedup");
            for r in &report.rows {
                println!(
                    "{:<26} {:>10} {:>14.0} {:>8.3}",
                    r.label,
                    fmt_rate(r.acceptance_rate),
                    r.draft_flops_per_token,
                    r.median_speedup
                );
            }
            if let Some(p) = a.json {
                write_json(&p, &report)?;
            }
        }
        Command::Stats(a) => {
            let opts = StatsOptions { model: a.model, prompts: PromptSource::File(a.prompts), dump_pairs: a.dump_pairs };
            let report = stats::run(&opts)?;
            for (name, k) in [("attention", &report.layers.attention), ("mlp", &report.layers.mlp)] {
                println!(
                    "{name:<9} acs min {:.4} max {:.4} mean {:.4} median {:.4}  time {:.4} ms",
                    k.min_acs, k.max_acs, k.mean_acs, k.median_acs, k.mean_time_ms
                );
            }
            if let Some(r) = report.layers.attention_to_mlp_time_ratio {
                println!("attention/mlp time ratio {r:.3}");
            }
            if let Some(p) = a.json {
                write_json(&p, &report)?;
            }
        }
        Command::MakeToyModel(a) => {
            let json = a.json.clone();
            let report = toy::run(&a.options())?;
            println!("wrote {} ({} parameters)", report.path.display(), report.parameters);
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
        }
    }
    Ok(())
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASD_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
