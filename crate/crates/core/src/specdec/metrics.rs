use serde::{Deserialize, Serialize};

use crate::model::DraftSpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerTimesMs {
    pub attention: Vec<f64>,
    pub mlp: Vec<f64>,
}

/// Counters and timings for one generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tokens_generated: usize,
    pub draft_proposed: usize,
    pub draft_accepted: usize,
    /// `draft_accepted / draft_proposed`; absent when nothing was drafted.
    pub acceptance_rate: Option<f64>,
    pub rounds: usize,
    pub wall_ms_total: f64,
    pub wall_ms_prefill: f64,
    pub wall_ms_draft: f64,
    pub wall_ms_verify: f64,
    pub tokens_per_sec: f64,
    /// Filled in when paired with a vanilla run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup_vs_baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft_spec: Option<DraftSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acs: Option<Vec<f64>>,
    /// Mean per-call time of each full-model sub-block, when instrumented.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_time_ms: Option<LayerTimesMs>,
}

impl RunMetrics {
    pub(crate) fn finish(&mut self, wall_ms_total: f64) {
        self.wall_ms_total = wall_ms_total;
        self.acceptance_rate =
            (self.draft_proposed > 0).then(|| self.draft_accepted as f64 / self.draft_proposed as f64);
        self.tokens_per_sec =
            if wall_ms_total > 0.0 { self.tokens_generated as f64 / (wall_ms_total / 1e3) } else { 0.0 };
    }

    pub fn pair_with_baseline(&mut self, baseline: &RunMetrics) {
        self.speedup_vs_baseline =
            (baseline.tokens_per_sec > 0.0).then(|| self.tokens_per_sec / baseline.tokens_per_sec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates() {
        let mut m = RunMetrics { tokens_generated: 10, draft_proposed: 8, draft_accepted: 6, ..Default::default() };
        m.finish(500.0);
        assert_eq!(m.acceptance_rate, Some(0.75));
        assert_eq!(m.tokens_per_sec, 20.0);
        let base = RunMetrics { tokens_per_sec: 10.0, ..Default::default() };
        m.pair_with_baseline(&base);
        assert_eq!(m.speedup_vs_baseline, Some(2.0));
    }

    #[test]
    fn json_field_names() {
        let mut m = RunMetrics::default();
        m.finish(1.0);
        let v = serde_json::to_value(&m).unwrap();
        for f in [
            "tokens_generated",
            "draft_proposed",
            "draft_accepted",
            "acceptance_rate",
            "rounds",
            "wall_ms_total",
            "wall_ms_prefill",
            "wall_ms_draft",
            "wall_ms_verify",
            "tokens_per_sec",
        ] {
            assert!(v.get(f).is_some(), "{f}");
        }
        assert!(v["acceptance_rate"].is_null());
    }
}
