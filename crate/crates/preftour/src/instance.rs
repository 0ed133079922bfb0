//! TSP instances, tours, and the reward function.
//!
//! An [`Instance`] is a set of points in the unit square with a dense matrix
//! of exact Euclidean distances. A [`Tour`] is a permutation of the nodes
//! with its closed-tour length cached; the reward of a tour is the negated
//! length, so that larger rewards always mean shorter tours.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A Euclidean TSP instance.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    /// Node coordinates, unit-square units.
    pub coords: Vec<(f64, f64)>,
    /// Node count (≥ 3).
    pub n: usize,
    /// Row-major n×n symmetric distance matrix, zero diagonal.
    dist: Vec<f64>,
}

impl Instance {
    /// Build an instance from coordinates, deriving the distance matrix.
    pub fn from_coords(id: impl Into<String>, coords: Vec<(f64, f64)>) -> Result<Self> {
        let n = coords.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "instance needs at least 3 nodes, got {n}"
            )));
        }
        if let Some((x, y)) = coords
            .iter()
            .find(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "non-finite coordinate ({x}, {y})"
            )));
        }
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = coords[i].0 - coords[j].0;
                let dy = coords[i].1 - coords[j].1;
                let d = (dx * dx + dy * dy).sqrt();
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(Self {
            id: id.into(),
            coords,
            n,
            dist,
        })
    }

    /// Distance between nodes `i` and `j`.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Serialize to the native JSON format (`{"id", "coords"}`).
    ///
    /// Distances are derived on load, never stored; coordinate round-trips
    /// are bit-exact.
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            id: self.id.clone(),
            coords: self.coords.iter().map(|&(x, y)| [x, y]).collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    /// Parse the native JSON format.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Instance::from_coords(file.id, file.coords.iter().map(|c| (c[0], c[1])).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    id: String,
    coords: Vec<[f64; 2]>,
}

/// A closed tour over an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    /// Visit order; a permutation of `0..n`.
    pub perm: Vec<usize>,
    /// Closed-tour Euclidean length.
    pub length: f64,
    /// `-length`; larger is better.
    pub reward: f64,
}

impl Tour {
    /// Validate `perm` against `inst` and cache its length and reward.
    pub fn new(inst: &Instance, perm: Vec<usize>) -> Result<Self> {
        let length = tour_length(inst, &perm)?;
        Ok(Self {
            perm,
            length,
            reward: -length,
        })
    }
}

/// Check that `perm` visits every node of an `n`-node instance exactly once.
pub fn validate_perm(n: usize, perm: &[usize]) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidTour(format!(
            "tour has {} nodes, instance has {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &node in perm {
        if node >= n {
            return Err(Error::InvalidTour(format!("node {node} out of range")));
        }
        if seen[node] {
            return Err(Error::InvalidTour(format!("node {node} visited twice")));
        }
        seen[node] = true;
    }
    Ok(())
}

/// Closed-tour length of `perm` on `inst`.
pub fn tour_length(inst: &Instance, perm: &[usize]) -> Result<f64> {
    validate_perm(inst.n, perm)?;
    let mut total = 0.0;
    for k in 0..perm.len() {
        total += inst.dist(perm[k], perm[(k + 1) % perm.len()]);
    }
    Ok(total)
}

/// Reward of a tour: the negated length, so larger rewards mean shorter
/// tours and win labels read as "is shorter".
pub fn reward(_inst: &Instance, tour: &Tour) -> f64 {
    -tour.length
}

/// Generate `count` instances with coordinates i.i.d. uniform on [0,1]².
///
/// Instance `i` draws from its own sub-stream of `seed`, so the set is
/// deterministic and every instance is independent of the others.
pub fn generate_uniform(n: usize, count: usize, seed: u64) -> Result<Vec<Instance>> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("n must be ≥ 3, got {n}")));
    }
    if count < 1 {
        return Err(Error::InvalidArgument("count must be ≥ 1".into()));
    }
    (0..count)
        .map(|i| {
            let mut rng = seed::instance_rng(seed, i as u64);
            let coords = (0..n)
                .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            Instance::from_coords(format!("uniform-n{n}-s{seed}-{i:04}"), coords)
        })
        .collect()
}

/// Parse a TSPLIB file (TYPE: TSP, EDGE_WEIGHT_TYPE: EUC_2D only).
///
/// Node indices are 1-based in the file and mapped to 0-based. Distances are
/// recomputed as exact Euclidean values rather than TSPLIB's rounded-integer
/// convention, since training uses continuous rewards.
pub fn parse_tsplib(text: &str) -> Result<Instance> {
    let mut name = String::from("tsplib");
    let mut dimension: Option<usize> = None;
    let mut weight_type: Option<String> = None;
    let mut problem_type: Option<String> = None;
    let mut coords: Vec<Option<(f64, f64)>> = Vec::new();
    let mut in_coords = false;
    let mut seen = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.eq_ignore_ascii_case("EOF") {
            break;
        }
        if in_coords {
            let dim = dimension.ok_or(Error::Parse {
                line: lineno,
                message: "NODE_COORD_SECTION before DIMENSION".into(),
            })?;
            if seen == dim {
                // Past the coordinate block; only EOF or blank lines belong here.
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unexpected content after {dim} coordinates: {line:?}"),
                });
            }
            let mut parts = line.split_whitespace();
            let parse_err = |msg: &str| Error::Parse {
                line: lineno,
                message: msg.into(),
            };
            let index: usize = parts
                .next()
                .ok_or_else(|| parse_err("missing node index"))?
                .parse()
                .map_err(|_| parse_err("node index is not an integer"))?;
            let x: f64 = parts
                .next()
                .ok_or_else(|| parse_err("missing x coordinate"))?
                .parse()
                .map_err(|_| parse_err("x coordinate is not a number"))?;
            let y: f64 = parts
                .next()
                .ok_or_else(|| parse_err("missing y coordinate"))?
                .parse()
                .map_err(|_| parse_err("y coordinate is not a number"))?;
            if parts.next().is_some() {
                return Err(parse_err("trailing fields on coordinate line"));
            }
            if index < 1 || index > dim {
                return Err(parse_err(&format!("node index {index} outside 1..={dim}")));
            }
            if coords[index - 1].is_some() {
                return Err(parse_err(&format!("duplicate node index {index}")));
            }
            coords[index - 1] = Some((x, y));
            seen += 1;
            continue;
        }
        if line.eq_ignore_ascii_case("NODE_COORD_SECTION") {
            let dim = dimension.ok_or(Error::Parse {
                line: lineno,
                message: "NODE_COORD_SECTION before DIMENSION".into(),
            })?;
            coords = vec![None; dim];
            in_coords = true;
            continue;
        }
        match line.split_once(':') {
            Some((key, value)) => {
                let key = key.trim().to_ascii_uppercase();
                let value = value.trim().to_string();
                match key.as_str() {
                    "NAME" => name = value,
                    "TYPE" => problem_type = Some(value),
                    "DIMENSION" => {
                        dimension = Some(value.parse().map_err(|_| Error::Parse {
                            line: lineno,
                            message: format!("DIMENSION is not an integer: {value:?}"),
                        })?)
                    }
                    "EDGE_WEIGHT_TYPE" => weight_type = Some(value),
                    // COMMENT and other keys are ignored.
                    _ => {}
                }
            }
            None => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected KEY: VALUE or a section marker, got {line:?}"),
                })
            }
        }
    }

    if let Some(t) = &problem_type {
        if !t.eq_ignore_ascii_case("TSP") {
            return Err(Error::UnsupportedFormat(format!("TYPE {t} (only TSP)")));
        }
    }
    match weight_type.as_deref() {
        Some("EUC_2D") => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat(format!(
                "EDGE_WEIGHT_TYPE {other} (only EUC_2D)"
            )))
        }
        None => return Err(Error::UnsupportedFormat("missing EDGE_WEIGHT_TYPE".into())),
    }
    let dim = dimension.ok_or(Error::Parse {
        line: 0,
        message: "missing DIMENSION".into(),
    })?;
    if seen != dim {
        return Err(Error::Parse {
            line: 0,
            message: format!("DIMENSION is {dim} but {seen} coordinates were given"),
        });
    }
    let coords: Vec<(f64, f64)> = coords.into_iter().map(|c| c.unwrap()).collect();
    Instance::from_coords(name, coords)
}
