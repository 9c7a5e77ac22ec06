use serde::Serialize;

use super::rng::SessionRng;
use super::SpecError;
use crate::tensor::{argmax, Matrix};

/// Result of checking one round of drafted tokens against the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerificationOutcome {
    /// Length of the accepted draft prefix.
    pub num_accepted: usize,
    /// The one token the full model contributes this round: the correction
    /// at the first rejected position, or the bonus token after a clean sweep.
    pub token: u32,
    pub bonus: bool,
}

/// Greedy check: row `i` of `target_logits` predicts the token after
/// position `i`, so row `i - 1` verifies draft `i` and row `k` gives the bonus.
pub fn verify_greedy(drafts: &[u32], target_logits: &Matrix) -> Result<VerificationOutcome, SpecError> {
    let k = drafts.len();
    if k == 0 {
        return Err(SpecError::Verify("no drafted tokens".into()));
    }
    if target_logits.rows() != k + 1 {
        return Err(SpecError::Verify(format!("{} logit rows for {k} drafts", target_logits.rows())));
    }
    for (i, &d) in drafts.iter().enumerate() {
        let want = argmax(target_logits.row(i))? as u32;
        if want != d {
            return Ok(VerificationOutcome { num_accepted: i, token: want, bonus: false });
        }
    }
    Ok(VerificationOutcome {
        num_accepted: k,
        token: argmax(target_logits.row(k))? as u32,
        bonus: true,
    })
}

/// Distribution-preserving check for sampled drafts.
///
/// `q[i]` is the distribution draft `i` was sampled from and `p[i]` the full
/// model's distribution at the same position (`p` has one extra entry for
/// the bonus). Draft `i` survives with probability `min(1, p/q)`; the first
/// casualty is replaced by a sample from `max(p - q, 0)` renormalized.
pub fn verify_sampling(
    drafts: &[u32],
    q: &[Vec<f32>],
    p: &[Vec<f32>],
    rng: &mut SessionRng,
) -> Result<VerificationOutcome, SpecError> {
    let k = drafts.len();
    if k == 0 || q.len() != k || p.len() != k + 1 {
        return Err(SpecError::Verify(format!(
            "{k} drafts with {} draft and {} target distributions",
            q.len(),
            p.len()
        )));
    }
    for (i, &d) in drafts.iter().enumerate() {
        let (qi, pi) = (&q[i], &p[i]);
        let t = d as usize;
        if t >= qi.len() || qi.len() != pi.len() {
            return Err(SpecError::Verify(format!("draft token {d} outside distribution of {}", qi.len())));
        }
        let (pt, qt) = (pi[t] as f64, qi[t] as f64);
        // u < 1 and p >= q forces acceptance
        if rng.next_uniform() * qt <= pt {
            continue;
        }
        let residual: Vec<f32> = pi.iter().zip(qi).map(|(&a, &b)| (a - b).max(0.0)).collect();
        if residual.iter().all(|&r| r == 0.0) {
            return Err(SpecError::ZeroResidual { position: i });
        }
        return Ok(VerificationOutcome { num_accepted: i, token: rng.sample(&residual) as u32, bonus: false });
    }
    Ok(VerificationOutcome { num_accepted: k, token: rng.sample(&p[k]) as u32, bonus: true })
}
