//! The per-instance heatmap policy.
//!
//! A policy is an n×n matrix of edge logits. Tours are built
//! autoregressively from node 0: at each step the next node is drawn from a
//! softmax over the current node's logits restricted to unvisited nodes
//! (temperature divides the logits first). Sampling, scoring, and gradients
//! all share one decode path, so a tour's recorded log-probability is exactly
//! reproducible by [`score_tour`].
//!
//! Numerics: softmax uses max-subtraction, and masked (visited) nodes are
//! excluded from the sum rather than set to -inf. When only one node remains
//! the step contributes exactly zero log-probability and entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{validate_perm, Instance, Tour};

/// Edge-logit policy for a single instance.
#[derive(Debug, Clone)]
pub struct HeatmapPolicy {
    pub n: usize,
    /// Sampling temperature; divides logits before the softmax.
    pub temperature: f64,
    /// Row-major n×n logits; the diagonal is unused.
    theta: Vec<f64>,
}

impl HeatmapPolicy {
    /// All-zero logits (the uniform policy) at temperature 1.
    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            temperature: 1.0,
            theta: vec![0.0; n * n],
        }
    }

    /// Build from raw logits.
    pub fn from_theta(n: usize, temperature: f64, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                n * n
            )));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "theta entries must be finite".into(),
            ));
        }
        Ok(Self {
            n,
            temperature,
            theta,
        })
    }

    #[inline]
    pub fn logit(&self, from: usize, to: usize) -> f64 {
        self.theta[from * self.n + to]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Serialize to the checkpoint format `{"n", "temperature", "theta"}`
    /// with row-major logits.
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            n: self.n,
            temperature: self.temperature,
            theta: self.theta.clone(),
        };
        serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
    }

    /// Parse the checkpoint format.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        Self::from_theta(file.n, file.temperature, file.theta)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    n: usize,
    temperature: f64,
    theta: Vec<f64>,
}

/// Heatmap initialization modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Uniform policy over the feasible set at every step.
    Zeros,
    /// Distance-aware warm start, `theta[i][j] = -dist(i,j) * scale`.
    NegDistance,
}

/// Initialize a policy for `inst`.
pub fn init_heatmap(inst: &Instance, mode: InitMode, scale: f64) -> Result<HeatmapPolicy> {
    let n = inst.n;
    match mode {
        InitMode::Zeros => Ok(HeatmapPolicy::uniform(n)),
        InitMode::NegDistance => {
            if !(scale > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "neg_distance init needs scale > 0, got {scale}"
                )));
            }
            let mut theta = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        theta[i * n + j] = -inst.dist(i, j) * scale;
                    }
                }
            }
            HeatmapPolicy::from_theta(n, 1.0, theta)
        }
    }
}

/// A batch of sampled tours with everything the losses need.
#[derive(Debug, Clone, Default)]
pub struct SampleBatch {
    pub tours: Vec<Tour>,
    /// log pi(tour | instance), one per tour.
    pub log_probs: Vec<f64>,
    /// Entropy of each step's conditional distribution, one list per tour.
    pub step_entropies: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl SampleBatch {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            tours: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            step_entropies: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, tour: Tour, log_prob: f64, entropies: Vec<f64>) {
        self.rewards.push(tour.reward);
        self.tours.push(tour);
        self.log_probs.push(log_prob);
        self.step_entropies.push(entropies);
    }

    pub fn len(&self) -> usize {
        self.tours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tours.is_empty()
    }

    /// Sum of step entropies for tour `i`.
    pub fn trajectory_entropy(&self, i: usize) -> f64 {
        self.step_entropies[i].iter().sum()
    }

    pub fn mean_trajectory_entropy(&self) -> f64 {
        let total: f64 = (0..self.len()).map(|i| self.trajectory_entropy(i)).sum();
        total / self.len() as f64
    }
}

/// Conditional next-node distribution from `current` given `visited`.
///
/// Returns the feasible nodes (ascending) and their probabilities, which sum
/// to 1 over the feasible set; visited nodes carry exactly zero probability
/// by construction.
pub fn step_distribution(
    policy: &HeatmapPolicy,
    current: usize,
    visited: &[bool],
) -> (Vec<usize>, Vec<f64>) {
    assert_eq!(visited.len(), policy.n, "visited mask length must equal n");
    let feasible: Vec<usize> = (0..policy.n).filter(|&j| !visited[j]).collect();
    let mut shifted = Vec::with_capacity(feasible.len());
    let mut probs = Vec::with_capacity(feasible.len());
    eval_step(policy, current, &feasible, &mut shifted, &mut probs);
    (feasible, probs)
}

/// Fill `shifted` with max-subtracted scaled logits and `probs` with the
/// normalized distribution; returns ln of the normalizer, so that
/// `log p[t] = shifted[t] - ln_z`.
fn eval_step(
    policy: &HeatmapPolicy,
    current: usize,
    feasible: &[usize],
    shifted: &mut Vec<f64>,
    probs: &mut Vec<f64>,
) -> f64 {
    shifted.clear();
    probs.clear();
    let mut max = f64::NEG_INFINITY;
    for &j in feasible {
        let u = policy.logit(current, j) / policy.temperature;
        shifted.push(u);
        if u > max {
            max = u;
        }
    }
    let mut z = 0.0;
    for s in shifted.iter_mut() {
        *s -= max;
        let w = s.exp();
        probs.push(w);
        z += w;
    }
    let ln_z = z.ln();
    for p in probs.iter_mut() {
        *p /= z;
    }
    ln_z
}

fn entropy_of(shifted: &[f64], probs: &[f64], ln_z: f64) -> f64 {
    let mut h = 0.0;
    for (p, s) in probs.iter().zip(shifted) {
        h -= p * (s - ln_z);
    }
    h
}

/// Sample `count` tours from the policy. Every tour starts at node 0.
pub fn sample_tours(
    policy: &HeatmapPolicy,
    inst: &Instance,
    count: usize,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    assert_eq!(policy.n, inst.n, "policy and instance disagree on n");
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples for pairwise comparisons, got {count}"
        )));
    }
    let n = inst.n;
    let mut batch = SampleBatch::with_capacity(count);
    let mut visited = vec![false; n];
    let mut feasible = Vec::with_capacity(n);
    let mut shifted = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for _ in 0..count {
        visited.fill(false);
        visited[0] = true;
        let mut perm = Vec::with_capacity(n);
        perm.push(0);
        let mut current = 0usize;
        let mut log_prob = 0.0;
        let mut entropies = Vec::with_capacity(n - 1);
        for _ in 1..n {
            feasible.clear();
            feasible.extend((0..n).filter(|&j| !visited[j]));
            let ln_z = eval_step(policy, current, &feasible, &mut shifted, &mut probs);
            let u: f64 = rng.random();
            let mut chosen = feasible.len() - 1;
            let mut acc = 0.0;
            for (t, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = t;
                    break;
                }
            }
            log_prob += shifted[chosen] - ln_z;
            entropies.push(entropy_of(&shifted, &probs, ln_z));
            current = feasible[chosen];
            visited[current] = true;
            perm.push(current);
        }
        let tour = Tour::new(inst, perm)?;
        batch.push(tour, log_prob, entropies);
    }
    Ok(batch)
}

/// Exact log-probability and per-step entropies of generating `perm`.
///
/// Tours are cyclic, so `perm` is first rotated to the canonical form
/// starting at node 0 (direction preserved); this is how off-policy tours
/// such as local-search refinements are scored.
pub fn score_tour(
    policy: &HeatmapPolicy,
    inst: &Instance,
    perm: &[usize],
) -> Result<(f64, Vec<f64>)> {
    assert_eq!(policy.n, inst.n, "policy and instance disagree on n");
    validate_perm(inst.n, perm)?;
    let canonical = canonical_rotation(perm);
    let perm = canonical.as_deref().unwrap_or(perm);
    let n = inst.n;
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut feasible = Vec::with_capacity(n);
    let mut shifted = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    let mut entropies = Vec::with_capacity(n - 1);
    for step in 1..n {
        let current = perm[step - 1];
        let next = perm[step];
        feasible.clear();
        feasible.extend((0..n).filter(|&j| !visited[j]));
        let ln_z = eval_step(policy, current, &feasible, &mut shifted, &mut probs);
        let t = feasible
            .binary_search(&next)
            .expect("next node is unvisited");
        log_prob += shifted[t] - ln_z;
        entropies.push(entropy_of(&shifted, &probs, ln_z));
        visited[next] = true;
    }
    Ok((log_prob, entropies))
}

/// Gradient of `log pi(perm | inst)` with respect to the logits, as a
/// row-major n×n matrix.
///
/// Each step with current node `c`, feasible set F and chosen node `a`
/// contributes `(1[j = a] - p(j)) / temperature` at entry (c, j) for j in F.
pub fn grad_log_prob(policy: &HeatmapPolicy, inst: &Instance, perm: &[usize]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; inst.n * inst.n];
    accumulate_grad_log_prob(policy, inst, perm, 1.0, &mut grad)?;
    Ok(grad)
}

/// Add `weight * grad log pi(perm)` into `acc`. Used by the trainer to fold
/// a whole batch into one matrix without intermediate allocations.
pub fn accumulate_grad_log_prob(
    policy: &HeatmapPolicy,
    inst: &Instance,
    perm: &[usize],
    weight: f64,
    acc: &mut [f64],
) -> Result<()> {
    assert_eq!(policy.n, inst.n, "policy and instance disagree on n");
    let n = inst.n;
    if acc.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "gradient buffer has {} entries, expected {}",
            acc.len(),
            n * n
        )));
    }
    validate_perm(n, perm)?;
    let canonical = canonical_rotation(perm);
    let perm = canonical.as_deref().unwrap_or(perm);
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut feasible = Vec::with_capacity(n);
    let mut shifted = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let inv_temp = 1.0 / policy.temperature;
    for step in 1..n {
        let current = perm[step - 1];
        let next = perm[step];
        feasible.clear();
        feasible.extend((0..n).filter(|&j| !visited[j]));
        eval_step(policy, current, &feasible, &mut shifted, &mut probs);
        let row = current * n;
        for (t, &j) in feasible.iter().enumerate() {
            let indicator = if j == next { 1.0 } else { 0.0 };
            acc[row + j] += weight * (indicator - probs[t]) * inv_temp;
        }
        visited[next] = true;
    }
    Ok(())
}

/// Deterministic argmax decode; ties break toward the lowest node index.
pub fn greedy_decode(policy: &HeatmapPolicy, inst: &Instance) -> Tour {
    assert_eq!(policy.n, inst.n, "policy and instance disagree on n");
    let n = inst.n;
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut perm = Vec::with_capacity(n);
    perm.push(0);
    let mut current = 0usize;
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_logit = f64::NEG_INFINITY;
        for (j, &seen) in visited.iter().enumerate() {
            if !seen && policy.logit(current, j) > best_logit {
                best = j;
                best_logit = policy.logit(current, j);
            }
        }
        visited[best] = true;
        perm.push(best);
        current = best;
    }
    Tour::new(inst, perm).expect("greedy decode builds a valid permutation")
}

/// Rotate so node 0 leads, if it does not already. Returns `None` when the
/// input is already canonical.
fn canonical_rotation(perm: &[usize]) -> Option<Vec<usize>> {
    if perm.first() == Some(&0) {
        return None;
    }
    let pos = perm.iter().position(|&v| v == 0)?;
    let mut out = Vec::with_capacity(perm.len());
    out.extend_from_slice(&perm[pos..]);
    out.extend_from_slice(&perm[..pos]);
    Some(out)
}
