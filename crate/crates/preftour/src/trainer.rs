//! The training loop, gradient-ascent optimizers, and diagnostics.
//!
//! One training step samples a batch of tours, turns it into a loss and
//! per-tour advantages (preference-based or reinforce), folds the batch into
//! a single ascent direction `(1/N) * sum_j advantage_j * grad log pi(tour_j)`
//! in a fixed order, and applies the optimizer. During the optional
//! fine-tuning phase each sampled tour is first refined with 2-opt and the
//! refinements join the batch, so the preference labels pick up the
//! (tour, refined-tour) pairs.
//!
//! Training is per instance: the heatmap is instance-specific, so a
//! multi-instance experiment is a set of independent runs with derived
//! sub-seeds. Everything here is deterministic given the config.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::local_search::{make_finetune_pairs, LsConfig};
use crate::oracle::{solve_held_karp, HELD_KARP_LIMIT};
use crate::policy::{
    accumulate_grad_log_prob, init_heatmap, sample_tours, score_tour, HeatmapPolicy, InitMode,
    SampleBatch,
};
use crate::preference::{make_labels, PreferenceKind, PreferenceModel};
use crate::seed;

/// Which update scheme drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Preference-based loss over sampled tours.
    Po,
    /// Shared-mean-baseline score-function estimator.
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer choice and hyperparameters (flat config keys).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(rename = "optimizer", default = "default_optimizer")]
    pub kind: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(rename = "adam_beta1", default = "default_beta1")]
    pub beta1: f64,
    #[serde(rename = "adam_beta2", default = "default_beta2")]
    pub beta2: f64,
    #[serde(rename = "adam_epsilon", default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_learning_rate() -> f64 {
    1e-2
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: default_optimizer(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

/// Heatmap initialization (flat config keys).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    #[serde(rename = "init", default = "default_init_mode")]
    pub mode: InitMode,
    #[serde(rename = "init_scale", default = "default_init_scale")]
    pub scale: f64,
}

fn default_init_mode() -> InitMode {
    InitMode::Zeros
}
fn default_init_scale() -> f64 {
    1.0
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mode: default_init_mode(),
            scale: default_init_scale(),
        }
    }
}

/// Full training configuration. Serializes to flat key-value form, so a
/// config file is a plain list of the documented keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// preference_model / margin / length_control keys.
    #[serde(flatten)]
    pub preference: PreferenceModel,
    /// Scale of log-probability gaps in the preference losses.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Tours sampled per step (N).
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    /// Standard training steps (T).
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Local-search fine-tuning steps appended after the standard phase.
    #[serde(default)]
    pub finetune_steps: usize,
    /// ls_iters / ls_strategy keys.
    #[serde(flatten)]
    pub ls: LsConfig,
    /// optimizer / learning_rate / adam_* keys.
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    /// init / init_scale keys.
    #[serde(flatten)]
    pub init: InitConfig,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Reward ties closer than this carry no preference label.
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
    /// Affine reward transform applied before labels/advantages are formed.
    /// Identity by default; exists to exercise the invariance properties of
    /// the losses (preference training is unaffected by any positive scale,
    /// reinforce is not).
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    #[serde(default)]
    pub reward_shift: f64,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Po
}
fn default_alpha() -> f64 {
    0.05
}
fn default_samples() -> usize {
    16
}
fn default_steps() -> usize {
    500
}
fn default_temperature() -> f64 {
    1.0
}
fn default_tie_tol() -> f64 {
    1e-12
}
fn default_reward_scale() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: default_algorithm(),
            preference: PreferenceModel::default(),
            alpha: default_alpha(),
            samples_per_step: default_samples(),
            steps: default_steps(),
            finetune_steps: 0,
            ls: LsConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            init: InitConfig::default(),
            temperature: default_temperature(),
            tie_tol: default_tie_tol(),
            reward_scale: default_reward_scale(),
            reward_shift: 0.0,
        }
    }
}

impl TrainConfig {
    /// Check every invariant, reporting all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0) {
            problems.push(format!("alpha: must be > 0, got {}", self.alpha));
        }
        if self.samples_per_step < 2 {
            problems.push(format!(
                "samples_per_step: must be ≥ 2, got {}",
                self.samples_per_step
            ));
        }
        if self.steps + self.finetune_steps == 0 {
            problems.push("steps: steps + finetune_steps must be ≥ 1".into());
        }
        if !(self.optimizer.learning_rate > 0.0) {
            problems.push(format!(
                "learning_rate: must be > 0, got {}",
                self.optimizer.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.optimizer.beta1) {
            problems.push(format!(
                "adam_beta1: must be in [0, 1), got {}",
                self.optimizer.beta1
            ));
        }
        if !(0.0..1.0).contains(&self.optimizer.beta2) {
            problems.push(format!(
                "adam_beta2: must be in [0, 1), got {}",
                self.optimizer.beta2
            ));
        }
        if !(self.optimizer.epsilon > 0.0) {
            problems.push(format!(
                "adam_epsilon: must be > 0, got {}",
                self.optimizer.epsilon
            ));
        }
        if !(self.temperature > 0.0) {
            problems.push(format!(
                "temperature: must be > 0, got {}",
                self.temperature
            ));
        }
        if !(self.tie_tol >= 0.0) {
            problems.push(format!("tie_tol: must be ≥ 0, got {}", self.tie_tol));
        }
        if !(self.preference.margin >= 0.0) {
            problems.push(format!(
                "margin: must be ≥ 0, got {}",
                self.preference.margin
            ));
        }
        if self.ls.max_iters == 0 {
            problems.push("ls_iters: must be ≥ 1".into());
        }
        if self.init.mode == InitMode::NegDistance && !(self.init.scale > 0.0) {
            problems.push(format!("init_scale: must be > 0, got {}", self.init.scale));
        }
        if !(self.reward_scale > 0.0) {
            problems.push(format!(
                "reward_scale: must be > 0, got {}",
                self.reward_scale
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Copy of this config with the derived sub-seed for instance `index`.
    pub fn for_instance(&self, index: u64) -> TrainConfig {
        TrainConfig {
            seed: seed::derive_seed(self.seed, index),
            ..self.clone()
        }
    }
}

/// Per-step diagnostics.
///
/// `mean_reward` and `best_reward` describe the step's batch; `gap` is the
/// optimality gap of the best tour sampled so far (so it is non-increasing
/// and directly yields iterations-to-gap counts); `consistency` is absent
/// when the batch has no strictly ordered reward pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub best_reward: f64,
    pub gap: Option<f64>,
    /// Mean over the batch of each tour's summed step entropies.
    pub trajectory_entropy: f64,
    pub consistency: Option<f64>,
    pub advantage_values: Vec<f64>,
    pub loss: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str =
        "step,mean_reward,best_reward,gap,entropy,consistency,loss";

    /// One CSV row matching [`Self::CSV_HEADER`]; absent values are empty
    /// fields. Floats use the shortest round-trip form, so rows are
    /// byte-stable across runs.
    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mean_reward,
            self.best_reward,
            opt(self.gap),
            self.trajectory_entropy,
            opt(self.consistency),
            self.loss
        )
    }
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: HeatmapPolicy,
    pub metrics: Vec<StepMetrics>,
}

/// Train a fresh policy on one instance.
///
/// The optimality reference for the gap metric is the exact Held-Karp
/// optimum when the instance is small enough, otherwise absent.
pub fn train_instance(inst: &Instance, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let reference = if inst.n <= HELD_KARP_LIMIT {
        Some(solve_held_karp(inst)?.best_length)
    } else {
        None
    };
    let policy = initial_policy(inst, cfg)?;
    train_from(inst, cfg, policy, reference)
}

/// Build the configured starting policy for `inst`.
pub fn initial_policy(inst: &Instance, cfg: &TrainConfig) -> Result<HeatmapPolicy> {
    let mut policy = init_heatmap(inst, cfg.init.mode, cfg.init.scale)?;
    policy.temperature = cfg.temperature;
    Ok(policy)
}

/// Train starting from an existing policy (used for fine-tuning runs), with
/// an optional known-optimal length as the gap reference.
pub fn train_from(
    inst: &Instance,
    cfg: &TrainConfig,
    mut policy: HeatmapPolicy,
    reference: Option<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if policy.n != inst.n {
        return Err(Error::InvalidArgument(format!(
            "policy is for n={}, instance has n={}",
            policy.n, inst.n
        )));
    }
    let n = inst.n;
    let mut rng = seed::training_rng(cfg.seed);
    let mut opt_state = OptimizerState::new(&cfg.optimizer, n * n);
    let total_steps = cfg.steps + cfg.finetune_steps;
    let mut metrics = Vec::with_capacity(total_steps);
    let mut best_len = f64::INFINITY;
    let mut grad = vec![0.0; n * n];

    for step in 1..=total_steps {
        let mut batch = sample_tours(&policy, inst, cfg.samples_per_step, &mut rng)?;
        if step > cfg.steps {
            batch = make_finetune_pairs(&policy, inst, &batch, &cfg.ls, &mut rng)?;
        }
        let train_rewards: Vec<f64> = batch
            .rewards
            .iter()
            .map(|r| cfg.reward_scale * r + cfg.reward_shift)
            .collect();
        let step_counts: Vec<usize> = batch.step_entropies.iter().map(|e| e.len()).collect();
        let (loss, advantages) =
            loss_and_advantages(cfg, &batch.log_probs, &step_counts, &train_rewards)?;

        let batch_size = batch.len() as f64;
        let mean_reward = batch.rewards.iter().sum::<f64>() / batch_size;
        let best_reward = batch
            .rewards
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        for tour in &batch.tours {
            if tour.length < best_len {
                best_len = tour.length;
            }
        }
        let gap = reference.map(|opt| (best_len - opt) / opt);
        // The batch's recorded log-probs are exactly what rescoring under the
        // sampling policy would give, so the metric can use them directly.
        let consistency =
            consistency_from_parts(&batch.rewards, &batch.log_probs).map(|c| c.fraction);

        grad.fill(0.0);
        for (j, tour) in batch.tours.iter().enumerate() {
            accumulate_grad_log_prob(
                &policy,
                inst,
                &tour.perm,
                advantages[j] / batch_size,
                &mut grad,
            )?;
        }
        optimizer_step(policy.theta_mut(), &grad, &mut opt_state, &cfg.optimizer)?;

        metrics.push(StepMetrics {
            step,
            mean_reward,
            best_reward,
            gap,
            trajectory_entropy: batch.mean_trajectory_entropy(),
            consistency,
            advantage_values: advantages,
            loss,
        });
    }
    Ok(TrainOutcome { policy, metrics })
}

/// Loss and per-tour advantages for one batch under the configured
/// algorithm. Advantages follow the shared convention: the ascent direction
/// is `(1/N) * sum_j advantage_j * grad log pi(tour_j)`.
fn loss_and_advantages(
    cfg: &TrainConfig,
    log_probs: &[f64],
    step_counts: &[usize],
    rewards: &[f64],
) -> Result<(f64, Vec<f64>)> {
    match cfg.algorithm {
        Algorithm::Reinforce => {
            let res = crate::reinforce::reinforce_parts(rewards, log_probs)?;
            Ok((res.loss, res.advantages))
        }
        Algorithm::Po => match cfg.preference.kind {
            PreferenceKind::PlackettLuce => {
                crate::preference::pl_loss_parts(cfg.alpha, log_probs, rewards)
            }
            _ => {
                let labels = make_labels(rewards, cfg.tie_tol)?;
                crate::preference::pairwise_loss_parts(
                    &cfg.preference,
                    cfg.alpha,
                    log_probs,
                    step_counts,
                    &labels,
                )
            }
        },
    }
}

/// How often the policy ranks tours the way the reward does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    /// Fraction of strictly reward-ordered pairs whose log-probabilities are
    /// strictly ordered the same way.
    pub fraction: f64,
    /// Number of strictly reward-ordered pairs considered.
    pub ordered_pairs: usize,
    /// How many of those pairs had exactly tied log-probabilities (they
    /// count as misses under the strict inequality).
    pub log_prob_ties: usize,
}

/// Consistency of `policy` on the tours of `batch`: the fraction of ordered
/// pairs with `reward_j > reward_k` for which
/// `log pi(tour_j) > log pi(tour_k)` under the given policy.
///
/// Tours are rescored under `policy`, so the metric applies to any tour set,
/// not just batches the policy itself sampled. Returns `None` when no pair
/// is strictly reward-ordered (the metric is undefined, not zero).
pub fn consistency_metric(
    policy: &HeatmapPolicy,
    inst: &Instance,
    batch: &SampleBatch,
) -> Option<Consistency> {
    let log_probs: Vec<f64> = batch
        .tours
        .iter()
        .map(|t| {
            score_tour(policy, inst, &t.perm)
                .expect("batch tours are valid")
                .0
        })
        .collect();
    consistency_from_parts(&batch.rewards, &log_probs)
}

fn consistency_from_parts(rewards: &[f64], log_probs: &[f64]) -> Option<Consistency> {
    let n = rewards.len();
    let mut ordered = 0usize;
    let mut aligned = 0usize;
    let mut ties = 0usize;
    for j in 0..n {
        for k in 0..n {
            if rewards[j] > rewards[k] {
                ordered += 1;
                if log_probs[j] > log_probs[k] {
                    aligned += 1;
                } else if log_probs[j] == log_probs[k] {
                    ties += 1;
                }
            }
        }
    }
    if ordered == 0 {
        return None;
    }
    Some(Consistency {
        fraction: aligned as f64 / ordered as f64,
        ordered_pairs: ordered,
        log_prob_ties: ties,
    })
}

/// Per-tour advantages under the configured algorithm, paired with tour
/// lengths and sorted by length ascending.
pub fn advantage_report(batch: &SampleBatch, cfg: &TrainConfig) -> Result<Vec<(f64, f64)>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "advantage report needs a nonempty batch".into(),
        ));
    }
    let step_counts: Vec<usize> = batch.step_entropies.iter().map(|e| e.len()).collect();
    let (_, advantages) = loss_and_advantages(cfg, &batch.log_probs, &step_counts, &batch.rewards)?;
    let mut rows: Vec<(f64, f64)> = batch
        .tours
        .iter()
        .map(|t| t.length)
        .zip(advantages)
        .collect();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("lengths are finite"));
    Ok(rows)
}

/// Moment estimates carried across optimizer steps. Empty for SGD.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, param_count: usize) -> Self {
        match cfg.kind {
            OptimizerKind::Sgd => Self {
                t: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
            OptimizerKind::Adam => Self {
                t: 0,
                m: vec![0.0; param_count],
                v: vec![0.0; param_count],
            },
        }
    }
}

/// One gradient-ascent step: `theta += learning_rate * direction`, where the
/// direction is the raw gradient for SGD or the bias-corrected adaptive
/// moment estimate for Adam.
pub fn optimizer_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::InvalidArgument(format!(
            "theta has {} parameters but gradient has {}",
            theta.len(),
            grad.len()
        )));
    }
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (t, g) in theta.iter_mut().zip(grad) {
                *t += cfg.learning_rate * g;
            }
        }
        OptimizerKind::Adam => {
            if state.m.len() != theta.len() {
                return Err(Error::InvalidArgument(format!(
                    "optimizer state sized for {} parameters, theta has {}",
                    state.m.len(),
                    theta.len()
                )));
            }
            state.t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
            for i in 0..theta.len() {
                state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
                state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                theta[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
    Ok(())
}
