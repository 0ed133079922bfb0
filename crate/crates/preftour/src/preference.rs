//! Preference labels, comparison models, and the preference-based losses.
//!
//! Rewards never enter the loss directly: they are reduced to conflict-free
//! win labels (`reward_j - reward_k > tie_tol`), and the policy's own
//! log-probabilities stand in for the latent reward differences. The scaled
//! difference `alpha * (log pi(tour_j) - log pi(tour_k))` plays the role of
//! the latent reward gap; the per-instance normalizer cancels in the
//! difference and is never computed.
//!
//! Pairwise models map that gap to a win probability `f(z)`:
//! Bradley-Terry (`f = sigmoid`), Thurstone (`f = standard normal CDF`), and
//! an unbounded exponential (`f = exp`, whose gradient weight is constant, so
//! it never vanishes for well-separated pairs). Plackett-Luce scores the full
//! reward-sorted ranking instead of pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SampleBatch;

/// Pairwise (or listwise) comparison model choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferenceKind {
    #[serde(rename = "bt")]
    BradleyTerry,
    #[serde(rename = "thurstone")]
    Thurstone,
    #[serde(rename = "pl")]
    PlackettLuce,
    #[serde(rename = "exp")]
    Exponential,
}

/// A comparison model plus its optional loss shaping knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    /// Model family.
    #[serde(rename = "preference_model", default = "default_kind")]
    pub kind: PreferenceKind,
    /// Margin subtracted from the scaled log-probability gap before `f`.
    /// Only shapes non-linear models; for the exponential it offsets the
    /// loss value without changing any gradient, and is subtracted anyway so
    /// loss values stay comparable.
    #[serde(default)]
    pub margin: f64,
    /// Divide each log-probability by its tour's step count before
    /// differencing. On fixed-length TSP tours this equals rescaling alpha
    /// by 1/(n-1).
    #[serde(default)]
    pub length_control: bool,
}

fn default_kind() -> PreferenceKind {
    PreferenceKind::BradleyTerry
}

impl Default for PreferenceModel {
    fn default() -> Self {
        Self {
            kind: PreferenceKind::BradleyTerry,
            margin: 0.0,
            length_control: false,
        }
    }
}

impl PreferenceModel {
    pub fn new(kind: PreferenceKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Pairwise win labels `y[j][k] = 1(reward_j - reward_k > tie_tol)`.
///
/// Induced by a real-valued reward, so the relation is antisymmetric and
/// cycle-free; tied pairs carry no label in either direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceLabels {
    n: usize,
    wins: Vec<bool>,
}

impl PreferenceLabels {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Does tour `j` beat tour `k`?
    #[inline]
    pub fn wins(&self, j: usize, k: usize) -> bool {
        self.wins[j * self.n + k]
    }

    /// Wins minus losses for tour `j`.
    pub fn dominance(&self, j: usize) -> i64 {
        let mut net = 0i64;
        for k in 0..self.n {
            if self.wins(j, k) {
                net += 1;
            }
            if self.wins(k, j) {
                net -= 1;
            }
        }
        net
    }
}

/// Build conflict-free win labels from rewards.
pub fn make_labels(rewards: &[f64], tie_tol: f64) -> Result<PreferenceLabels> {
    let n = rewards.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rewards, got {n}"
        )));
    }
    if !(tie_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tie_tol must be ≥ 0, got {tie_tol}"
        )));
    }
    let mut wins = vec![false; n * n];
    for j in 0..n {
        for k in 0..n {
            wins[j * n + k] = rewards[j] - rewards[k] > tie_tol;
        }
    }
    Ok(PreferenceLabels { n, wins })
}

/// Latent reward difference implied by two log-probabilities:
/// `alpha * (log_prob_1 - log_prob_2)`.
///
/// The per-instance normalizer would appear in both terms and cancels, so it
/// never needs to be computed.
pub fn implied_reward_diff(alpha: f64, log_prob_1: f64, log_prob_2: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    Ok(alpha * (log_prob_1 - log_prob_2))
}

/// Gradient weight `f'(z - margin) / f(z - margin)` of a pairwise model.
///
/// Bradley-Terry gives `sigmoid(-(z - margin))`, Thurstone the inverse Mills
/// ratio `pdf/CDF` (evaluated tail-stably, so the ratio is finite for every
/// finite argument), and the exponential a constant 1.
///
/// Panics for Plackett-Luce, which has no pairwise weight.
pub fn pair_weight(model: &PreferenceModel, z: f64) -> f64 {
    weight_raw(model.kind, z - model.margin)
}

fn weight_raw(kind: PreferenceKind, z: f64) -> f64 {
    match kind {
        PreferenceKind::BradleyTerry => sigmoid(-z),
        PreferenceKind::Thurstone => mills_ratio(z),
        PreferenceKind::Exponential => 1.0,
        PreferenceKind::PlackettLuce => {
            panic!("pair_weight is undefined for the Plackett-Luce model")
        }
    }
}

/// `log f(z)` for a pairwise model; the margin must already be applied.
fn log_f(kind: PreferenceKind, z: f64) -> f64 {
    match kind {
        PreferenceKind::BradleyTerry => -softplus(-z),
        PreferenceKind::Thurstone => log_normal_cdf(z),
        PreferenceKind::Exponential => z,
        PreferenceKind::PlackettLuce => unreachable!("guarded by po_loss_pairwise"),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Threshold below which the direct pdf/CDF ratio loses precision to
/// underflow and the asymptotic series takes over.
const MILLS_ASYMPTOTIC_Z: f64 = -16.0;

/// Mills-ratio tail series `1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8`.
fn mills_series(z: f64) -> f64 {
    let t = 1.0 / (z * z);
    1.0 - t * (1.0 - 3.0 * t * (1.0 - 5.0 * t * (1.0 - 7.0 * t)))
}

/// Inverse Mills ratio `pdf(z) / CDF(z)` of the standard normal.
fn mills_ratio(z: f64) -> f64 {
    if z < MILLS_ASYMPTOTIC_Z {
        -z / mills_series(z)
    } else {
        let pdf = (-0.5 * z * z).exp() * (-LN_SQRT_2PI).exp();
        let cdf = 0.5 * libm::erfc(-z / SQRT_2);
        pdf / cdf
    }
}

/// `ln CDF(z)` of the standard normal, stable far into the left tail.
fn log_normal_cdf(z: f64) -> f64 {
    if z < MILLS_ASYMPTOTIC_Z {
        -0.5 * z * z - LN_SQRT_2PI - (-z).ln() + mills_series(z).ln()
    } else {
        (0.5 * libm::erfc(-z / SQRT_2)).ln()
    }
}

/// Pairwise preference loss and the per-tour advantages of its gradient.
///
/// The loss averages `-log f(alpha * gap - margin)` over all N² ordered
/// pairs (non-win pairs contribute zero), matching a mean over the full
/// label grid. The returned advantages satisfy
/// `grad loss = -(1/N) * sum_j advantage[j] * grad log pi(tour_j)`,
/// so ascending `(1/N) * sum_j advantage[j] * grad log pi(tour_j)` descends
/// the loss.
pub fn po_loss_pairwise(
    model: &PreferenceModel,
    alpha: f64,
    batch: &SampleBatch,
    labels: &PreferenceLabels,
) -> Result<(f64, Vec<f64>)> {
    if model.kind == PreferenceKind::PlackettLuce {
        return Err(Error::WrongModel(
            "po_loss_pairwise handles pairwise models; use po_loss_pl for rankings".into(),
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if labels.len() != batch.len() {
        return Err(Error::InvalidArgument(format!(
            "labels cover {} tours but batch has {}",
            labels.len(),
            batch.len()
        )));
    }
    let steps: Vec<usize> = batch.step_entropies.iter().map(|e| e.len()).collect();
    if model.length_control && steps.contains(&0) {
        return Err(Error::InvalidArgument(
            "length control needs at least one decision step per tour".into(),
        ));
    }
    pairwise_loss_parts(model, alpha, &batch.log_probs, &steps, labels)
}

/// Loss core over raw log-probabilities; `steps` is each tour's decision
/// count (used only under length control).
pub(crate) fn pairwise_loss_parts(
    model: &PreferenceModel,
    alpha: f64,
    log_probs: &[f64],
    steps: &[usize],
    labels: &PreferenceLabels,
) -> Result<(f64, Vec<f64>)> {
    let n = log_probs.len();
    let scaled: Vec<f64> = if model.length_control {
        log_probs
            .iter()
            .zip(steps)
            .map(|(lp, &s)| lp / s as f64)
            .collect()
    } else {
        log_probs.to_vec()
    };
    let alpha_eff: Vec<f64> = if model.length_control {
        steps.iter().map(|&s| alpha / s as f64).collect()
    } else {
        vec![alpha; n]
    };
    let mut loss_sum = 0.0;
    let mut net = vec![0.0; n];
    for j in 0..n {
        for k in 0..n {
            if !labels.wins(j, k) {
                continue;
            }
            let z = alpha * (scaled[j] - scaled[k]) - model.margin;
            loss_sum += log_f(model.kind, z);
            let w = weight_raw(model.kind, z);
            net[j] += w;
            net[k] -= w;
        }
    }
    let n_f = n as f64;
    let loss = -loss_sum / (n_f * n_f);
    let advantages: Vec<f64> = (0..n).map(|j| (alpha_eff[j] * net[j]) / n_f).collect();
    Ok((loss, advantages))
}

/// Plackett-Luce ranking loss over the reward-sorted batch.
///
/// The target ranking sorts rewards descending (ties broken by sample
/// index). The loss is the negative ranking log-likelihood of the scaled
/// log-probabilities; advantages follow the same
/// `grad loss = -(1/N) * sum_j advantage[j] * grad log pi(tour_j)`
/// convention as the pairwise loss. Note the normalization differs from the
/// pairwise 1/N² mean, so loss values are not comparable across families.
pub fn po_loss_pl(alpha: f64, batch: &SampleBatch) -> Result<(f64, Vec<f64>)> {
    pl_loss_parts(alpha, &batch.log_probs, &batch.rewards)
}

#[allow(clippy::needless_range_loop)] // suffix recurrences read clearest indexed
pub(crate) fn pl_loss_parts(
    alpha: f64,
    log_probs: &[f64],
    rewards: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = log_probs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 tours, got {n}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        rewards[b]
            .partial_cmp(&rewards[a])
            .expect("rewards are finite")
            .then(a.cmp(&b))
    });
    let scaled: Vec<f64> = order.iter().map(|&i| alpha * log_probs[i]).collect();
    // Suffix log-sum-exp: lse[k] = LSE(scaled[k..]).
    let mut lse = vec![0.0; n];
    lse[n - 1] = scaled[n - 1];
    for k in (0..n - 1).rev() {
        lse[k] = log_add_exp(scaled[k], lse[k + 1]);
    }
    let mut loss = 0.0;
    for k in 0..n {
        loss -= scaled[k] - lse[k];
    }
    let n_f = n as f64;
    let mut advantages = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        let mut inner = 0.0;
        for k in 0..=rank {
            inner += (scaled[rank] - lse[k]).exp();
        }
        advantages[idx] = alpha * (1.0 - inner) * n_f;
    }
    Ok((loss, advantages))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_uniform;
    use crate::policy::sample_tours;
    use crate::seed;
    use proptest::prelude::*;

    const TIE_TOL: f64 = 1e-12;

    /// Batch with the given log-probs/rewards and a fixed step count; tours
    /// themselves are irrelevant to the losses.
    fn synthetic_batch(log_probs: &[f64], rewards: &[f64], steps: usize) -> SampleBatch {
        let inst = generate_uniform(steps + 1, 1, 400).unwrap().remove(0);
        let policy = crate::policy::HeatmapPolicy::uniform(steps + 1);
        let mut rng = seed::training_rng(400);
        let mut batch = sample_tours(&policy, &inst, log_probs.len().max(2), &mut rng).unwrap();
        batch.tours.truncate(log_probs.len());
        batch.step_entropies.truncate(log_probs.len());
        batch.log_probs = log_probs.to_vec();
        batch.rewards = rewards.to_vec();
        batch
    }

    #[test]
    fn labels_basic_and_ties() {
        let labels = make_labels(&[-3.0, -5.0], TIE_TOL).unwrap();
        assert!(labels.wins(0, 1));
        assert!(!labels.wins(1, 0));
        assert!(!labels.wins(0, 0));

        let tied = make_labels(&[-4.0, -4.0], TIE_TOL).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!(!tied.wins(j, k));
            }
        }
    }

    #[test]
    fn labels_affine_invariance() {
        let rewards = [-3.2, -5.1, -4.4, -3.9];
        let shifted: Vec<f64> = rewards.iter().map(|r| 2.0 * r + 5.0).collect();
        let a = make_labels(&rewards, TIE_TOL).unwrap();
        let b = make_labels(&shifted, TIE_TOL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_are_cycle_free() {
        // A strict order induced by reals cannot cycle; spot-check transitivity.
        let rewards = [-1.0, -2.0, -3.0, -2.5];
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    if labels.wins(a, b) && labels.wins(b, c) {
                        assert!(labels.wins(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn implied_diff_basics() {
        assert_eq!(implied_reward_diff(0.5, -2.0, -2.0).unwrap(), 0.0);
        assert_eq!(implied_reward_diff(0.05, -1.0, -3.0).unwrap(), 0.1);
        // Common shifts cancel.
        assert_eq!(
            implied_reward_diff(0.05, -1.0 + 7.0, -3.0 + 7.0).unwrap(),
            implied_reward_diff(0.05, -1.0, -3.0).unwrap()
        );
        assert!(implied_reward_diff(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn pair_weight_known_values() {
        let bt = PreferenceModel::new(PreferenceKind::BradleyTerry);
        assert_eq!(pair_weight(&bt, 0.0), 0.5);
        let exp = PreferenceModel::new(PreferenceKind::Exponential);
        assert_eq!(pair_weight(&exp, 0.0), 1.0);
        assert_eq!(pair_weight(&exp, 123.4), 1.0);
        let th = PreferenceModel::new(PreferenceKind::Thurstone);
        // Independently derived: pdf(0)/CDF(0) = sqrt(2/pi).
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((pair_weight(&th, 0.0) - expected).abs() < 1e-4);
    }

    #[test]
    fn pair_weight_applies_margin_as_shift() {
        let with_margin = PreferenceModel {
            kind: PreferenceKind::BradleyTerry,
            margin: 0.7,
            length_control: false,
        };
        let plain = PreferenceModel::new(PreferenceKind::BradleyTerry);
        assert_eq!(
            pair_weight(&with_margin, 1.2),
            pair_weight(&plain, 1.2 - 0.7)
        );
    }

    #[test]
    fn thurstone_weight_is_finite_and_tail_accurate() {
        let th = PreferenceModel::new(PreferenceKind::Thurstone);
        for &z in &[
            -1e6, -1e3, -50.0, -30.0, -16.5, -15.9, -4.0, 0.0, 4.0, 40.0, 1e6,
        ] {
            let w = pair_weight(&th, z);
            assert!(w.is_finite() && w >= 0.0, "weight at {z} is {w}");
        }
        // Deep tail: -z < pdf/CDF < -z + 2/(-z).
        for &z in &[-20.0, -35.0, -100.0] {
            let w = pair_weight(&th, z);
            assert!(w > -z && w < -z + 2.0 / -z, "weight at {z} is {w}");
        }
        // Continuity across the asymptotic switch.
        let below = pair_weight(&th, MILLS_ASYMPTOTIC_Z - 1e-9);
        let above = pair_weight(&th, MILLS_ASYMPTOTIC_Z + 1e-9);
        assert!((below - above).abs() / above < 1e-9);
    }

    #[test]
    fn log_normal_cdf_is_continuous_at_the_switch() {
        let below = log_normal_cdf(MILLS_ASYMPTOTIC_Z - 1e-9);
        let above = log_normal_cdf(MILLS_ASYMPTOTIC_Z + 1e-9);
        assert!((below - above).abs() < 1e-7, "{below} vs {above}");
    }

    #[test]
    fn bt_two_tour_worked_example() {
        // alpha = 0.05, log-probs (-1, -3), tour 0 preferred.
        let batch = synthetic_batch(&[-1.0, -3.0], &[-3.0, -5.0], 4);
        let labels = make_labels(&batch.rewards, TIE_TOL).unwrap();
        let bt = PreferenceModel::new(PreferenceKind::BradleyTerry);
        let (loss, adv) = po_loss_pairwise(&bt, 0.05, &batch, &labels).unwrap();
        // Independent evaluation of sigma.
        let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expected_loss = -0.25 * sigma(0.1).ln();
        assert!((loss - expected_loss).abs() < 1e-12);
        let expected_adv = 0.05 / 2.0 * sigma(-0.1);
        assert!((adv[0] - expected_adv).abs() < 1e-12);
        assert!((adv[1] + expected_adv).abs() < 1e-12);
    }

    #[test]
    fn all_equal_rewards_give_zero_loss_and_advantages() {
        let batch = synthetic_batch(&[-1.0, -2.0, -3.0], &[-4.0, -4.0, -4.0], 4);
        let labels = make_labels(&batch.rewards, TIE_TOL).unwrap();
        for kind in [
            PreferenceKind::BradleyTerry,
            PreferenceKind::Thurstone,
            PreferenceKind::Exponential,
        ] {
            let (loss, adv) =
                po_loss_pairwise(&PreferenceModel::new(kind), 0.1, &batch, &labels).unwrap();
            assert_eq!(loss, 0.0);
            assert!(adv.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn exponential_advantages_count_wins_minus_losses() {
        let log_probs = [-2.0, -5.0, -3.5, -4.1];
        let rewards = [-3.0, -6.0, -4.0, -5.0]; // strict order 0 > 2 > 3 > 1
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        let exp = PreferenceModel::new(PreferenceKind::Exponential);
        let alpha = 0.05;
        let (_, adv) = po_loss_pairwise(&exp, alpha, &batch, &labels).unwrap();
        for (j, &a) in adv.iter().enumerate() {
            let expected = (alpha * labels.dominance(j) as f64) / 4.0;
            assert_eq!(a, expected, "tour {j}");
        }
        // Best of N takes alpha * (N-1) / N.
        assert_eq!(adv[0], alpha * 3.0 / 4.0);
        // Distinct rewards pair wins with losses: the sum is exactly zero.
        assert_eq!(adv.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn exponential_loss_matches_mean_over_pairs_form() {
        let log_probs = [-2.0, -5.0, -3.5, -4.1, -1.2];
        let rewards = [-3.0, -6.0, -4.0, -5.0, -2.9];
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        let exp = PreferenceModel::new(PreferenceKind::Exponential);
        let alpha = 0.05;
        let (loss, _) = po_loss_pairwise(&exp, alpha, &batch, &labels).unwrap();
        // Mean over the full N x N grid of alpha * gap * label, negated.
        let n = log_probs.len();
        let mut sum = 0.0;
        for j in 0..n {
            for k in 0..n {
                if rewards[j] - rewards[k] > TIE_TOL {
                    sum += alpha * (log_probs[j] - log_probs[k]);
                }
            }
        }
        let expected = -sum / (n * n) as f64;
        assert!((loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn log_prob_shift_invariance() {
        let log_probs = [-2.0, -5.0, -3.5, -4.1];
        let rewards = [-3.0, -6.0, -4.0, -5.0];
        let shifted: Vec<f64> = log_probs.iter().map(|lp| lp + 11.25).collect();
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        for kind in [
            PreferenceKind::BradleyTerry,
            PreferenceKind::Thurstone,
            PreferenceKind::Exponential,
        ] {
            let model = PreferenceModel::new(kind);
            let a = synthetic_batch(&log_probs, &rewards, 4);
            let b = synthetic_batch(&shifted, &rewards, 4);
            let (loss_a, adv_a) = po_loss_pairwise(&model, 0.1, &a, &labels).unwrap();
            let (loss_b, adv_b) = po_loss_pairwise(&model, 0.1, &b, &labels).unwrap();
            assert!((loss_a - loss_b).abs() < 1e-12, "{kind:?}");
            for (x, y) in adv_a.iter().zip(&adv_b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let a = synthetic_batch(&log_probs, &rewards, 4);
        let b = synthetic_batch(&shifted, &rewards, 4);
        let (loss_a, adv_a) = po_loss_pl(0.1, &a).unwrap();
        let (loss_b, adv_b) = po_loss_pl(0.1, &b).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-12);
        for (x, y) in adv_a.iter().zip(&adv_b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn per_instance_reward_shift_is_bit_identical() {
        let log_probs = [-2.0, -5.0, -3.5];
        let rewards = [-3.0, -6.0, -4.0];
        let shifted: Vec<f64> = rewards.iter().map(|r| r + 17.0).collect();
        let labels_a = make_labels(&rewards, TIE_TOL).unwrap();
        let labels_b = make_labels(&shifted, TIE_TOL).unwrap();
        assert_eq!(labels_a, labels_b);
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let bt = PreferenceModel::new(PreferenceKind::BradleyTerry);
        let (loss_a, adv_a) = po_loss_pairwise(&bt, 0.05, &batch, &labels_a).unwrap();
        let (loss_b, adv_b) = po_loss_pairwise(&bt, 0.05, &batch, &labels_b).unwrap();
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
        for (x, y) in adv_a.iter().zip(&adv_b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn sign_consistency_of_pairwise_contributions() {
        // Whenever j beats k the (j,k) weight is strictly positive for the
        // bounded models, so the gradient pushes pi(tour_j) up over pi(tour_k).
        for kind in [PreferenceKind::BradleyTerry, PreferenceKind::Thurstone] {
            for &z in &[-8.0, -1.0, 0.0, 1.0, 8.0, 30.0] {
                assert!(weight_raw(kind, z) > 0.0, "{kind:?} at {z}");
            }
        }
        // Exponential advantages are rank-monotone.
        let log_probs = [-2.0, -5.0, -3.5, -4.1];
        let rewards = [-3.0, -6.0, -4.0, -5.0];
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        let exp = PreferenceModel::new(PreferenceKind::Exponential);
        let (_, adv) = po_loss_pairwise(&exp, 0.1, &batch, &labels).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap());
        for w in order.windows(2) {
            assert!(adv[w[0]] > adv[w[1]]);
        }
    }

    #[test]
    fn margin_shifts_loss_but_not_exponential_gradients() {
        let log_probs = [-2.0, -5.0, -3.5];
        let rewards = [-3.0, -6.0, -4.0];
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        let plain = PreferenceModel::new(PreferenceKind::Exponential);
        let with_margin = PreferenceModel {
            kind: PreferenceKind::Exponential,
            margin: 0.4,
            length_control: false,
        };
        let (loss_a, adv_a) = po_loss_pairwise(&plain, 0.1, &batch, &labels).unwrap();
        let (loss_b, adv_b) = po_loss_pairwise(&with_margin, 0.1, &batch, &labels).unwrap();
        assert_eq!(adv_a, adv_b);
        // Three win pairs, each shifted by margin, averaged over N^2 = 9.
        assert!((loss_b - (loss_a + 0.4 * 3.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn length_control_equals_alpha_rescaling_on_power_of_two_steps() {
        // With 16 decision steps the division is exact scaling, so the
        // equivalence holds bitwise.
        let inst = generate_uniform(17, 1, 88).unwrap().remove(0);
        let policy = crate::policy::HeatmapPolicy::uniform(17);
        let mut rng = seed::training_rng(88);
        let batch = sample_tours(&policy, &inst, 6, &mut rng).unwrap();
        let labels = make_labels(&batch.rewards, TIE_TOL).unwrap();
        let alpha = 0.05;
        let lc = PreferenceModel {
            kind: PreferenceKind::BradleyTerry,
            margin: 0.0,
            length_control: true,
        };
        let plain = PreferenceModel::new(PreferenceKind::BradleyTerry);
        let (loss_lc, adv_lc) = po_loss_pairwise(&lc, alpha, &batch, &labels).unwrap();
        let (loss_rs, adv_rs) = po_loss_pairwise(&plain, alpha / 16.0, &batch, &labels).unwrap();
        assert_eq!(loss_lc.to_bits(), loss_rs.to_bits());
        for (a, b) in adv_lc.iter().zip(&adv_rs) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pl_reduces_to_bt_for_pairs() {
        let log_probs = [-1.0, -3.0];
        let rewards = [-3.0, -5.0];
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let labels = make_labels(&rewards, TIE_TOL).unwrap();
        let alpha = 0.05;
        let (pl_loss, _) = po_loss_pl(alpha, &batch).unwrap();
        let bt = PreferenceModel::new(PreferenceKind::BradleyTerry);
        let (bt_loss, _) = po_loss_pairwise(&bt, alpha, &batch, &labels).unwrap();
        // The pairwise loss averages over N^2 = 4 ordered pairs; the ranking
        // likelihood does not, so they differ by exactly that factor.
        assert!((pl_loss - 4.0 * bt_loss).abs() < 1e-12);
    }

    #[test]
    fn pl_uniform_ranking_likelihood() {
        let batch = synthetic_batch(&[-2.5, -2.5, -2.5], &[-3.0, -4.0, -5.0], 4);
        let (loss, _) = po_loss_pl(1.0, &batch).unwrap();
        assert!((loss - (3f64.ln() + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn pl_advantages_sum_to_zero() {
        let log_probs = [-2.0, -5.0, -3.5, -4.1];
        let rewards = [-3.0, -6.0, -4.0, -5.0];
        let batch = synthetic_batch(&log_probs, &rewards, 4);
        let (_, adv) = po_loss_pl(0.3, &batch).unwrap();
        assert!(adv.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn guards_reject_misuse() {
        let batch = synthetic_batch(&[-1.0, -2.0], &[-3.0, -4.0], 4);
        let labels = make_labels(&batch.rewards, TIE_TOL).unwrap();
        let pl = PreferenceModel::new(PreferenceKind::PlackettLuce);
        assert!(matches!(
            po_loss_pairwise(&pl, 0.1, &batch, &labels),
            Err(Error::WrongModel(_))
        ));
        let bt = PreferenceModel::new(PreferenceKind::BradleyTerry);
        assert!(matches!(
            po_loss_pairwise(&bt, 0.0, &batch, &labels),
            Err(Error::InvalidArgument(_))
        ));
        let singleton = synthetic_batch(&[-1.0], &[-3.0], 4);
        assert!(matches!(
            po_loss_pl(0.1, &singleton),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_labels(&[1.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn labels_affine_invariant_under_random_transforms(
            rewards in proptest::collection::vec(-10.0f64..10.0, 2..8),
            k in 0.1f64..50.0,
            b in -100.0f64..100.0,
        ) {
            let transformed: Vec<f64> = rewards.iter().map(|r| k * r + b).collect();
            let a = make_labels(&rewards, TIE_TOL).unwrap();
            let t = make_labels(&transformed, TIE_TOL).unwrap();
            prop_assert_eq!(a, t);
        }

        #[test]
        fn labels_are_antisymmetric(
            rewards in proptest::collection::vec(-10.0f64..10.0, 2..8),
        ) {
            let labels = make_labels(&rewards, TIE_TOL).unwrap();
            for j in 0..rewards.len() {
                for k in 0..rewards.len() {
                    prop_assert!(!(labels.wins(j, k) && labels.wins(k, j)));
                }
            }
        }

        #[test]
        fn thurstone_weight_always_finite(z in -500.0f64..500.0) {
            let th = PreferenceModel::new(PreferenceKind::Thurstone);
            prop_assert!(pair_weight(&th, z).is_finite());
        }
    }
}
