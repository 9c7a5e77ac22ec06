use serde::{Deserialize, Serialize};

/// When to stop drafting and hand the round to the full model.
///
/// Drafting stops after `max_draft_len` tokens, or as soon as the drafted
/// token's probability falls below `confidence_threshold`. With `adaptive`
/// set, the threshold moves by `threshold_step` after each round: up when
/// the round's acceptance rate fell short of `target_accept_rate`, down
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftExitPolicy {
    pub max_draft_len: usize,
    pub confidence_threshold: f64,
    pub adaptive: bool,
    pub target_accept_rate: f64,
    pub threshold_step: f64,
}

impl Default for DraftExitPolicy {
    fn default() -> Self {
        Self {
            max_draft_len: 8,
            confidence_threshold: 0.4,
            adaptive: true,
            target_accept_rate: 0.7,
            threshold_step: 0.05,
        }
    }
}

impl DraftExitPolicy {
    /// A policy that always drafts exactly `k` tokens.
    pub fn fixed(k: usize) -> Self {
        Self { max_draft_len: k, confidence_threshold: 0.0, adaptive: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_draft_len < 1 {
            return Err("max_draft_len must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(format!("confidence threshold {} outside [0, 1]", self.confidence_threshold));
        }
        if !self.threshold_step.is_finite() || self.threshold_step < 0.0 {
            return Err(format!("threshold step {} must be >= 0", self.threshold_step));
        }
        Ok(())
    }

    pub fn should_exit(&self, chosen_prob: f64, drafted_so_far: usize) -> bool {
        drafted_so_far >= self.max_draft_len || chosen_prob < self.confidence_threshold
    }

    /// Ties go down, favoring longer drafts.
    pub fn update_threshold(&mut self, round_accept_rate: f64) {
        if !self.adaptive {
            return;
        }
        self.confidence_threshold = if round_accept_rate < self.target_accept_rate {
            (self.confidence_threshold + self.threshold_step).min(1.0)
        } else {
            (self.confidence_threshold - self.threshold_step).max(0.0)
        };
    }
}
