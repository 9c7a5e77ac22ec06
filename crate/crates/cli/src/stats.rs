use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use asd_core::admg::layer_stats;
use asd_core::model::{LayerTimings, ResidualTap, Sublayer};
use asd_core::modelio::PromptRecord;
use asd_core::{DraftSpec, LayerAcs, LayerStatsReport, Model};
use serde::Serialize;

use crate::{load_model, tokenizer, CliError, PromptSource};

#[derive(Debug, Clone)]
pub struct StatsOptions {
    pub model: PathBuf,
    pub prompts: PromptSource,
    /// Write every observed (before, after) residual pair as JSON lines.
    pub dump_pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub prompts: usize,
    pub tokens: usize,
    #[serde(flatten)]
    pub layers: LayerStatsReport,
}

/// One line of the pair dump.
#[derive(Serialize)]
struct Pair<'a> {
    prompt: &'a str,
    kind: &'static str,
    layer: usize,
    position: usize,
    before: &'a [f32],
    after: &'a [f32],
}

fn kind_name(s: Sublayer) -> &'static str {
    match s {
        Sublayer::Attention => "attention",
        Sublayer::Mlp => "mlp",
    }
}

struct Tap<'a> {
    acs: &'a mut LayerAcs,
    dump: Option<&'a mut BufWriter<File>>,
    prompt: &'a str,
    // next position per (kind, layer) within the current prompt
    positions: Vec<[usize; 2]>,
    error: Option<std::io::Error>,
}

impl ResidualTap for Tap<'_> {
    fn observe(&mut self, sublayer: Sublayer, layer: usize, before: &[f32], after: &[f32]) {
        self.acs.observe(sublayer, layer, before, after);
        let Some(out) = self.dump.as_deref_mut() else { return };
        let slot = &mut self.positions[layer - 1][sublayer as usize];
        let pair = Pair { prompt: self.prompt, kind: kind_name(sublayer), layer, position: *slot, before, after };
        *slot += 1;
        let res = serde_json::to_writer(&mut *out, &pair).map_err(std::io::Error::from).and_then(|_| out.write_all(b"\n"));
        if let Err(e) = res {
            self.error.get_or_insert(e);
        }
    }
}

pub fn run(opts: &StatsOptions) -> Result<StatsReport, CliError> {
    let model = load_model(&opts.model)?;
    let records = opts.prompts.load()?;
    run_with_model(&model, &records, opts.dump_pairs.as_ref())
}

pub fn run_with_model(model: &Model, records: &[PromptRecord], dump_pairs: Option<&PathBuf>) -> Result<StatsReport, CliError> {
    let tok = tokenizer(model)?;
    let num_layers = model.config().num_layers;
    let out_err = |path: &PathBuf| {
        let path = path.clone();
        move |source| CliError::Output { path, source }
    };
    let mut dump = match dump_pairs {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(out_err(p))?)),
        None => None,
    };

    let mut acs = LayerAcs::new(num_layers);
    let mut timings = LayerTimings::new(num_layers);
    let mut tokens = 0;
    for record in records {
        let prompt = tok.tokenize(record.text.as_bytes());
        if prompt.is_empty() {
            return Err(CliError::Generation(format!("prompt {} is empty", record.id)));
        }
        let mut cache = model.new_cache();
        let mut tap = Tap { acs: &mut acs, dump: dump.as_mut(), prompt: &record.id, positions: vec![[0; 2]; num_layers], error: None };
        model
            .forward_timed(&prompt, &mut cache, &DraftSpec::full(), Some(&mut tap), Some(&mut timings))
            .map_err(|e| CliError::Generation(format!("prompt {}: {e}", record.id)))?;
        if let (Some(e), Some(p)) = (tap.error.take(), dump_pairs) {
            return Err(out_err(p)(e));
        }
        tokens += prompt.len();
    }
    if let (Some(mut d), Some(p)) = (dump, dump_pairs) {
        d.flush().map_err(out_err(p))?;
    }

    let layers = layer_stats(&acs, &timings.mean_ms(Sublayer::Attention), &timings.mean_ms(Sublayer::Mlp))
        .map_err(|e| CliError::Generation(e.to_string()))?;
    Ok(StatsReport { prompts: records.len(), tokens, layers })
}
