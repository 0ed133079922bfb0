//! 2-opt local search and fine-tuning pair construction.
//!
//! A 2-opt move reverses a tour segment; it is accepted only when the exact
//! edge-delta says the tour gets strictly shorter (beyond a 1e-12 threshold,
//! which keeps degenerate instances from looping). The refined tour is
//! therefore never worse than its input, which is what makes 2-opt outputs
//! usable as preferred counterparts during fine-tuning.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, Tour};
use crate::policy::{score_tour, HeatmapPolicy, SampleBatch};

/// Minimum length decrease for a move to count as improving.
const IMPROVEMENT_EPS: f64 = 1e-12;

/// Scan strategies for the improving-move search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsStrategy {
    /// Apply the first improving move found in a seeded random scan order.
    FirstImprovement,
    /// Scan every move and apply the best; fully deterministic.
    BestImprovement,
}

/// Local-search budget and strategy.
///
/// `max_iters` caps the number of *accepted* improving moves, not scan
/// passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LsConfig {
    #[serde(rename = "ls_iters", default = "default_ls_iters")]
    pub max_iters: usize,
    #[serde(rename = "ls_strategy", default = "default_ls_strategy")]
    pub strategy: LsStrategy,
}

fn default_ls_iters() -> usize {
    20
}

fn default_ls_strategy() -> LsStrategy {
    LsStrategy::FirstImprovement
}

impl Default for LsConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            strategy: LsStrategy::FirstImprovement,
        }
    }
}

/// Run 2-opt on `tour`, applying up to `cfg.max_iters` improving reversals.
///
/// The result never has a larger length than the input (exactly, not within
/// tolerance). Deterministic given the strategy and RNG state.
pub fn two_opt(inst: &Instance, tour: &Tour, cfg: &LsConfig, rng: &mut impl Rng) -> Result<Tour> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("ls_iters must be ≥ 1".into()));
    }
    let n = inst.n;
    let mut perm = tour.perm.clone();
    let mut length = tour.length;
    let mut accepted = 0usize;

    // Candidate position pairs (a, b), a < b: reverse perm[a+1..=b], swapping
    // edges (perm[a], perm[a+1]) and (perm[b], perm[b+1 mod n]). The pair
    // (0, n-1) touches the same two edges in reverse and is a no-op.
    let mut moves: Vec<(usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n - 1 {
        for b in (a + 1)..n {
            if a == 0 && b == n - 1 {
                continue;
            }
            moves.push((a, b));
        }
    }

    'passes: while accepted < cfg.max_iters {
        match cfg.strategy {
            LsStrategy::FirstImprovement => {
                moves.shuffle(rng);
                let mut improved = false;
                for &(a, b) in &moves {
                    let delta = move_delta(inst, &perm, a, b);
                    if delta < -IMPROVEMENT_EPS {
                        apply_move(inst, &mut perm, &mut length, a, b, delta);
                        improved = true;
                        accepted += 1;
                        if accepted >= cfg.max_iters {
                            break 'passes;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            LsStrategy::BestImprovement => {
                let mut best_delta = -IMPROVEMENT_EPS;
                let mut best_move = None;
                for &(a, b) in &moves {
                    let delta = move_delta(inst, &perm, a, b);
                    if delta < best_delta {
                        best_delta = delta;
                        best_move = Some((a, b));
                    }
                }
                match best_move {
                    Some((a, b)) => {
                        apply_move(inst, &mut perm, &mut length, a, b, best_delta);
                        accepted += 1;
                    }
                    None => break,
                }
            }
        }
    }

    if accepted == 0 {
        return Ok(tour.clone());
    }
    let refined = Tour::new(inst, perm)?;
    // The accepted deltas guarantee improvement; the recomputed length can
    // only disagree by summation noise far below IMPROVEMENT_EPS. Guard the
    // exact monotonicity contract anyway.
    if refined.length > tour.length {
        return Ok(tour.clone());
    }
    Ok(refined)
}

/// Exact length change of reversing `perm[a+1..=b]`.
#[inline]
fn move_delta(inst: &Instance, perm: &[usize], a: usize, b: usize) -> f64 {
    let n = perm.len();
    let (pa, pa1) = (perm[a], perm[a + 1]);
    let (pb, pb1) = (perm[b], perm[(b + 1) % n]);
    inst.dist(pa, pb) + inst.dist(pa1, pb1) - inst.dist(pa, pa1) - inst.dist(pb, pb1)
}

fn apply_move(
    inst: &Instance,
    perm: &mut [usize],
    length: &mut f64,
    a: usize,
    b: usize,
    delta: f64,
) {
    perm[a + 1..=b].reverse();
    *length += delta;
    debug_assert!(
        (crate::instance::tour_length(inst, perm).unwrap() - *length).abs() < 1e-6,
        "delta bookkeeping diverged from a full recomputation"
    );
}

/// Refine every tour of `batch` with 2-opt and append the refinements,
/// scored under `policy`, giving a 2N-entry batch.
///
/// Entry `N + i` is the refinement of entry `i`. Downstream label
/// construction then recovers the (tour, refined-tour) preference pairs —
/// when a refinement equals its source the pair ties and contributes no
/// gradient.
pub fn make_finetune_pairs(
    policy: &HeatmapPolicy,
    inst: &Instance,
    batch: &SampleBatch,
    cfg: &LsConfig,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    let mut out = batch.clone();
    for i in 0..batch.len() {
        let refined = two_opt(inst, &batch.tours[i], cfg, rng)?;
        let (log_prob, entropies) = score_tour(policy, inst, &refined.perm)?;
        out.push(refined, log_prob, entropies);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_uniform, tour_length};
    use crate::oracle::solve_held_karp;
    use crate::policy::{sample_tours, HeatmapPolicy};
    use crate::seed;

    fn converge_cfg() -> LsConfig {
        LsConfig {
            max_iters: 10_000,
            strategy: LsStrategy::FirstImprovement,
        }
    }

    #[test]
    fn uncrosses_the_square() {
        let inst = Instance::from_coords(
            "square",
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)],
        )
        .unwrap();
        let crossed = Tour::new(&inst, vec![0, 2, 1, 3]).unwrap();
        assert!((crossed.length - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        let mut rng = seed::training_rng(0);
        let fixed = two_opt(&inst, &crossed, &converge_cfg(), &mut rng).unwrap();
        assert!((fixed.length - 4.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_tour_is_a_fixed_point() {
        let inst = Instance::from_coords("tri", vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]).unwrap();
        let tour = Tour::new(&inst, vec![0, 1, 2]).unwrap();
        let mut rng = seed::training_rng(0);
        let out = two_opt(&inst, &tour, &converge_cfg(), &mut rng).unwrap();
        assert_eq!(out.perm, tour.perm);
        assert_eq!(out.length, tour.length);
    }

    #[test]
    fn oracle_sandwich_over_random_tours() {
        // Converged 2-opt never beats the exact optimum and never loses to
        // its own input.
        use rand::seq::SliceRandom;
        let mut rng = seed::training_rng(5);
        for (i, inst) in generate_uniform(10, 20, 50).unwrap().iter().enumerate() {
            let oracle = solve_held_karp(inst).unwrap();
            for rep in 0..5 {
                let mut perm: Vec<usize> = (0..10).collect();
                perm[1..].shuffle(&mut rng);
                let tour = Tour::new(inst, perm).unwrap();
                let out = two_opt(inst, &tour, &converge_cfg(), &mut rng).unwrap();
                assert!(
                    out.length >= oracle.best_length - 1e-9,
                    "instance {i} rep {rep}: beat the oracle"
                );
                assert!(
                    out.length <= tour.length,
                    "instance {i} rep {rep}: got worse"
                );
            }
        }
    }

    #[test]
    fn monotone_and_valid_for_both_strategies() {
        use rand::seq::SliceRandom;
        let mut rng = seed::training_rng(9);
        let insts = generate_uniform(12, 10, 77).unwrap();
        for strategy in [LsStrategy::FirstImprovement, LsStrategy::BestImprovement] {
            let cfg = LsConfig {
                max_iters: 5,
                strategy,
            };
            for inst in &insts {
                let mut perm: Vec<usize> = (0..12).collect();
                perm[1..].shuffle(&mut rng);
                let tour = Tour::new(inst, perm).unwrap();
                let out = two_opt(inst, &tour, &cfg, &mut rng).unwrap();
                assert!(out.reward >= tour.reward);
                assert!(tour_length(inst, &out.perm).is_ok());
            }
        }
    }

    #[test]
    fn converged_search_is_idempotent_in_length() {
        use rand::seq::SliceRandom;
        let mut rng = seed::training_rng(13);
        let inst = generate_uniform(11, 1, 3).unwrap().remove(0);
        let mut perm: Vec<usize> = (0..11).collect();
        perm[1..].shuffle(&mut rng);
        let tour = Tour::new(&inst, perm).unwrap();
        let once = two_opt(&inst, &tour, &converge_cfg(), &mut rng).unwrap();
        let twice = two_opt(&inst, &once, &converge_cfg(), &mut rng).unwrap();
        assert_eq!(once.length, twice.length);
    }

    #[test]
    fn best_improvement_is_deterministic() {
        let inst = generate_uniform(9, 1, 21).unwrap().remove(0);
        let tour = Tour::new(&inst, (0..9).collect()).unwrap();
        let cfg = LsConfig {
            max_iters: 50,
            strategy: LsStrategy::BestImprovement,
        };
        let mut rng_a = seed::training_rng(1);
        let mut rng_b = seed::training_rng(2);
        let a = two_opt(&inst, &tour, &cfg, &mut rng_a).unwrap();
        let b = two_opt(&inst, &tour, &cfg, &mut rng_b).unwrap();
        assert_eq!(a.perm, b.perm);
    }

    #[test]
    fn max_iters_caps_accepted_moves() {
        let inst = generate_uniform(12, 1, 31).unwrap().remove(0);
        let tour = Tour::new(&inst, (0..12).collect()).unwrap();
        let capped = LsConfig {
            max_iters: 1,
            strategy: LsStrategy::BestImprovement,
        };
        let mut rng = seed::training_rng(0);
        let one = two_opt(&inst, &tour, &capped, &mut rng).unwrap();
        let full = two_opt(&inst, &tour, &converge_cfg(), &mut rng).unwrap();
        assert!(one.length <= tour.length);
        assert!(full.length <= one.length);
        assert!(matches!(
            two_opt(
                &inst,
                &tour,
                &LsConfig {
                    max_iters: 0,
                    strategy: LsStrategy::BestImprovement
                },
                &mut rng
            ),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn finetune_pairs_double_the_batch_and_score_refinements() {
        let mut rng = seed::training_rng(4);
        for (s, inst) in generate_uniform(8, 100, 61).unwrap().iter().enumerate() {
            let policy = HeatmapPolicy::uniform(8);
            let batch = sample_tours(&policy, inst, 6, &mut rng).unwrap();
            let augmented =
                make_finetune_pairs(&policy, inst, &batch, &LsConfig::default(), &mut rng).unwrap();
            assert_eq!(augmented.len(), 12);
            for i in 0..6 {
                // Refinement of entry i sits at entry 6 + i and is never worse.
                assert!(augmented.rewards[6 + i] >= augmented.rewards[i]);
                let (lp, _) = score_tour(&policy, inst, &augmented.tours[6 + i].perm).unwrap();
                assert!((lp - augmented.log_probs[6 + i]).abs() < 1e-9);
            }
            // Per-pair dominance lifts the refined half's mean reward.
            let sampled: f64 = augmented.rewards[..6].iter().sum();
            let refined: f64 = augmented.rewards[6..].iter().sum();
            assert!(refined >= sampled, "seed {s}");
        }
    }

    #[test]
    fn unchanged_refinements_tie_with_their_sources() {
        // A tour that 2-opt cannot improve duplicates itself in the
        // augmented batch; the pair carries no label either way.
        let inst = Instance::from_coords("tri", vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]).unwrap();
        let policy = HeatmapPolicy::uniform(3);
        let mut rng = seed::training_rng(8);
        let batch = sample_tours(&policy, &inst, 2, &mut rng).unwrap();
        let augmented =
            make_finetune_pairs(&policy, &inst, &batch, &LsConfig::default(), &mut rng).unwrap();
        let labels = crate::preference::make_labels(&augmented.rewards, 1e-12).unwrap();
        for i in 0..2 {
            // All triangle tours have equal length, so source and refinement tie.
            assert_eq!(augmented.rewards[i], augmented.rewards[2 + i]);
            assert!(!labels.wins(i, 2 + i));
            assert!(!labels.wins(2 + i, i));
        }
    }
}
