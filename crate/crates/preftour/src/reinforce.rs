//! Score-function baseline: advantages against the batch mean reward.
//!
//! The loss is the usual surrogate whose gradient (with advantages treated
//! as constants) is the policy-gradient estimator; ascending
//! `(1/N) * sum_i advantage[i] * grad log pi(tour_i)` maximizes expected
//! reward. Unlike the preference losses, these advantages carry the reward
//! scale: multiplying rewards by k multiplies every advantage by k.

use crate::error::{Error, Result};
use crate::policy::SampleBatch;

/// Shared-baseline advantages and the surrogate loss for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceBatchResult {
    /// Mean reward of the batch.
    pub baseline: f64,
    /// `reward_i - baseline`; sums to zero.
    pub advantages: Vec<f64>,
    /// `-(1/N) * sum_i advantage_i * log_prob_i`.
    pub loss: f64,
}

/// Compute the shared mean baseline, per-tour advantages, and surrogate loss.
pub fn reinforce_advantages(batch: &SampleBatch) -> Result<ReinforceBatchResult> {
    reinforce_parts(&batch.rewards, &batch.log_probs)
}

pub(crate) fn reinforce_parts(rewards: &[f64], log_probs: &[f64]) -> Result<ReinforceBatchResult> {
    let n = rewards.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 tours, got {n}"
        )));
    }
    let baseline = rewards.iter().sum::<f64>() / n as f64;
    let advantages: Vec<f64> = rewards.iter().map(|r| r - baseline).collect();
    let mut loss = 0.0;
    for (adv, lp) in advantages.iter().zip(log_probs) {
        loss -= adv * lp;
    }
    loss /= n as f64;
    Ok(ReinforceBatchResult {
        baseline,
        advantages,
        loss,
    })
}
