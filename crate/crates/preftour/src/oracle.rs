//! Exact reference solvers, used for optimality gaps and cross-checks only.
//!
//! Both solvers fix node 0 as the start and canonicalize the tour direction
//! (second node smaller than last), so equal inputs give identical outputs.
//! Ties between equal-length optima resolve to the lexicographically
//! smallest permutation.

use crate::error::{Error, Result};
use crate::instance::{tour_length, Instance, Tour};

/// Default node-count bound for [`solve_held_karp`]; the 2^n table must fit
/// in memory.
pub const HELD_KARP_LIMIT: usize = 18;

/// Node-count bound for [`solve_exhaustive`].
pub const EXHAUSTIVE_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Exhaustive,
    HeldKarp,
}

/// An exact optimum with the permutation that attains it.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best_perm: Vec<usize>,
    pub best_length: f64,
    pub method: OracleMethod,
}

/// Brute-force optimum over all (n-1)!/2 distinct closed tours.
///
/// Node 0 is fixed and reversal symmetry is halved by requiring the second
/// node to be smaller than the last.
pub fn solve_exhaustive(inst: &Instance) -> Result<OracleResult> {
    if inst.n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge(format!(
            "exhaustive enumeration handles n ≤ {EXHAUSTIVE_LIMIT}, got {}",
            inst.n
        )));
    }
    let n = inst.n;
    let mut perm = vec![0usize; n];
    let mut used = vec![false; n];
    used[0] = true;
    let mut best_perm: Vec<usize> = Vec::new();
    let mut best_len = f64::INFINITY;

    fn rec(
        inst: &Instance,
        depth: usize,
        len_so_far: f64,
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best_perm: &mut Vec<usize>,
        best_len: &mut f64,
    ) {
        let n = inst.n;
        if depth == n {
            let total = len_so_far + inst.dist(perm[n - 1], 0);
            // Strict improvement keeps the first (lexicographically smallest)
            // optimum, since candidates are visited in ascending order.
            if total < *best_len {
                *best_len = total;
                best_perm.clone_from(perm);
            }
            return;
        }
        for node in 1..n {
            if used[node] {
                continue;
            }
            // Reversal symmetry: the closing node must exceed the second one.
            if depth == n - 1 && node < perm[1] {
                continue;
            }
            used[node] = true;
            perm[depth] = node;
            let step = inst.dist(perm[depth - 1], node);
            rec(
                inst,
                depth + 1,
                len_so_far + step,
                perm,
                used,
                best_perm,
                best_len,
            );
            used[node] = false;
        }
    }

    rec(
        inst,
        1,
        0.0,
        &mut perm,
        &mut used,
        &mut best_perm,
        &mut best_len,
    );
    let best_length = tour_length(inst, &best_perm)?;
    Ok(OracleResult {
        best_perm,
        best_length,
        method: OracleMethod::Exhaustive,
    })
}

/// Held-Karp dynamic program with the default size bound.
pub fn solve_held_karp(inst: &Instance) -> Result<OracleResult> {
    solve_held_karp_with_limit(inst, HELD_KARP_LIMIT)
}

/// Held-Karp with a caller-chosen node-count bound.
pub fn solve_held_karp_with_limit(inst: &Instance, limit: usize) -> Result<OracleResult> {
    if inst.n > limit {
        return Err(Error::TooLarge(format!(
            "held-karp bound is n ≤ {limit}, got {}",
            inst.n
        )));
    }
    let n = inst.n;
    let m = n - 1; // nodes 1..n, encoded as bits 0..m
    let full: usize = (1 << m) - 1;
    // dp[mask * m + j]: shortest path from 0 through exactly the nodes of
    // `mask`, ending at node j+1.
    let mut dp = vec![f64::INFINITY; (full + 1) * m];
    let mut parent = vec![u8::MAX; (full + 1) * m];
    for j in 0..m {
        dp[(1 << j) * m + j] = inst.dist(0, j + 1);
    }
    for mask in 1..=full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let prev_mask = mask & !(1 << j);
            if prev_mask == 0 {
                continue; // base case already set
            }
            let mut best = f64::INFINITY;
            let mut best_k = u8::MAX;
            for k in 0..m {
                if prev_mask & (1 << k) == 0 {
                    continue;
                }
                let cand = dp[prev_mask * m + k] + inst.dist(k + 1, j + 1);
                if cand < best {
                    best = cand;
                    best_k = k as u8;
                }
            }
            dp[mask * m + j] = best;
            parent[mask * m + j] = best_k;
        }
    }
    let mut best = f64::INFINITY;
    let mut last = 0usize;
    for j in 0..m {
        let cand = dp[full * m + j] + inst.dist(j + 1, 0);
        if cand < best {
            best = cand;
            last = j;
        }
    }
    // Walk parents back to node 0.
    let mut rev = Vec::with_capacity(n);
    let mut mask = full;
    let mut j = last;
    loop {
        rev.push(j + 1);
        let p = parent[mask * m + j];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    debug_assert_eq!(mask, 0);
    let mut best_perm = Vec::with_capacity(n);
    best_perm.push(0);
    best_perm.extend(rev.iter().rev());
    // Canonical direction: second node smaller than last.
    if best_perm[1] > best_perm[n - 1] {
        best_perm[1..].reverse();
    }
    let best_length = tour_length(inst, &best_perm)?;
    Ok(OracleResult {
        best_perm,
        best_length,
        method: OracleMethod::HeldKarp,
    })
}

/// Relative excess of `tour` over the oracle optimum.
pub fn optimality_gap(_inst: &Instance, tour: &Tour, oracle: &OracleResult) -> f64 {
    (tour.length - oracle.best_length) / oracle.best_length
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_uniform;
    use crate::policy::{greedy_decode, init_heatmap, InitMode};

    fn square() -> Instance {
        Instance::from_coords(
            "square",
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_solves_square_and_triangle() {
        assert_eq!(solve_exhaustive(&square()).unwrap().best_length, 4.0);
        let tri = Instance::from_coords("tri", vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]).unwrap();
        assert_eq!(solve_exhaustive(&tri).unwrap().best_length, 12.0);
    }

    #[test]
    fn held_karp_solves_square_and_collinear() {
        assert_eq!(solve_held_karp(&square()).unwrap().best_length, 4.0);
        let line =
            Instance::from_coords("line", vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])
                .unwrap();
        // Out-and-back along the segment.
        assert_eq!(solve_held_karp(&line).unwrap().best_length, 6.0);
    }

    #[test]
    fn size_bounds_are_enforced() {
        let big = generate_uniform(11, 1, 0).unwrap().remove(0);
        assert!(matches!(solve_exhaustive(&big), Err(Error::TooLarge(_))));
        let huge = generate_uniform(19, 1, 0).unwrap().remove(0);
        assert!(matches!(solve_held_karp(&huge), Err(Error::TooLarge(_))));
        assert!(solve_held_karp_with_limit(&huge, 19).is_ok());
    }

    #[test]
    fn oracles_agree_on_random_instances() {
        for inst in generate_uniform(7, 12, 31).unwrap() {
            let a = solve_exhaustive(&inst).unwrap();
            let b = solve_held_karp(&inst).unwrap();
            assert_eq!(a.best_perm, b.best_perm, "instance {}", inst.id);
            assert_eq!(a.best_length, b.best_length);
        }
    }

    #[test]
    fn oracle_result_length_matches_its_perm() {
        for inst in generate_uniform(8, 5, 11).unwrap() {
            let res = solve_held_karp(&inst).unwrap();
            let recomputed = tour_length(&inst, &res.best_perm).unwrap();
            assert!((res.best_length - recomputed).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_is_zero_for_oracle_tour_and_positive_otherwise() {
        let inst = square();
        let oracle = solve_held_karp(&inst).unwrap();
        let opt = Tour::new(&inst, oracle.best_perm.clone()).unwrap();
        assert_eq!(optimality_gap(&inst, &opt, &oracle), 0.0);
        let worse = Tour::new(&inst, vec![0, 2, 1, 3]).unwrap();
        assert!(optimality_gap(&inst, &worse, &oracle) > 0.0);
    }

    #[test]
    fn gap_arithmetic() {
        // length 4.2 against an optimum of 4.0 is a 5% gap
        let inst = square();
        let oracle = solve_held_karp(&inst).unwrap();
        let tour = Tour {
            perm: vec![0, 1, 2, 3],
            length: 4.2,
            reward: -4.2,
        };
        assert!((optimality_gap(&inst, &tour, &oracle) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn greedy_tours_never_beat_the_oracle() {
        for inst in generate_uniform(12, 100, 202).unwrap() {
            let oracle = solve_held_karp(&inst).unwrap();
            let policy = init_heatmap(&inst, InitMode::NegDistance, 5.0).unwrap();
            let tour = greedy_decode(&policy, &inst);
            assert!(
                optimality_gap(&inst, &tour, &oracle) >= -1e-9,
                "instance {}",
                inst.id
            );
        }
    }
}
