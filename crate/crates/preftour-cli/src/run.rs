//! Training-run orchestration: parallel per-instance jobs, metrics CSVs,
//! checkpoints, summaries, and the run manifest.
//!
//! Every run directory is self-describing: the manifest carries the config
//! snapshot, the root seed, and each instance's derived seed, which is
//! enough to reproduce the metrics byte-for-byte. Parallelism only
//! distributes independent per-instance jobs; results are written in
//! instance order, so `--jobs` never changes any output file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use preftour::instance::Instance;
use preftour::oracle::{solve_held_karp, HELD_KARP_LIMIT};
use preftour::policy::HeatmapPolicy;
use preftour::trainer::{initial_policy, train_from, StepMetrics, TrainConfig, TrainOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Root seed; per-instance seeds are derived from it by index.
    pub seed: u64,
    pub config: TrainConfig,
    pub instances_path: String,
    pub instance_ids: Vec<String>,
    pub instance_seeds: Vec<u64>,
    pub artifacts: Artifacts,
    pub timings: Timings,
    pub status: String,
}

#[derive(Serialize, Deserialize)]
pub struct Artifacts {
    pub metrics_dir: String,
    pub checkpoints_dir: String,
    pub summary: String,
}

#[derive(Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u128,
    pub wall_ms: u128,
}

#[derive(Serialize, Deserialize)]
pub struct RunSummary {
    pub instances: usize,
    pub mean_best_gap: Option<f64>,
    pub mean_final_consistency: Option<f64>,
    pub mean_trajectory_entropy_first_fifth: f64,
    pub median_iters_to_gap: Option<f64>,
    pub gap_threshold: f64,
    pub per_instance: Vec<InstanceSummary>,
}

#[derive(Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: String,
    pub seed: u64,
    pub best_gap: Option<f64>,
    pub iters_to_gap: Option<usize>,
    pub final_consistency: Option<f64>,
    pub final_loss: f64,
}

pub const DEFAULT_GAP_THRESHOLD: f64 = 0.01;

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn read_manifest(dir: &Path) -> Result<Option<RunManifest>> {
    let path = manifest_path(dir);
    if !path.is_file() {
        return Ok(None);
    }
    let body = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    let manifest = serde_json::from_str(&body)
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    Ok(Some(manifest))
}

/// Train every instance (optionally from per-instance starting policies) and
/// write the run directory. Returns the outcomes in instance order.
#[allow(clippy::too_many_arguments)]
pub fn execute_training(
    command: &str,
    cfg: &TrainConfig,
    instances: &[Instance],
    instances_path: &Path,
    starts: Option<Vec<HeatmapPolicy>>,
    out: &Path,
    jobs: Option<usize>,
) -> Result<Vec<TrainOutcome>> {
    let started = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or_default();

    fs::create_dir_all(out.join("metrics")).map_err(|e| AppError::io(out, e))?;
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| AppError::io(out, e))?;

    let references: Vec<Option<f64>> = instances
        .iter()
        .map(|inst| {
            if inst.n <= HELD_KARP_LIMIT {
                solve_held_karp(inst)
                    .map(|r| Some(r.best_length))
                    .map_err(AppError::from)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let jobs_units: Vec<(usize, &Instance, Option<HeatmapPolicy>)> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let start = starts.as_ref().map(|s| s[i].clone());
            (i, inst, start)
        })
        .collect();

    let run_one =
        |(i, inst, start): &(usize, &Instance, Option<HeatmapPolicy>)| -> Result<TrainOutcome> {
            let cfg_i = cfg.for_instance(*i as u64);
            let policy = match start {
                Some(p) => {
                    if p.n != inst.n {
                        return Err(AppError::Usage(format!(
                            "checkpoint for {} has n={}, instance has n={}",
                            inst.id, p.n, inst.n
                        )));
                    }
                    p.clone()
                }
                None => initial_policy(inst, &cfg_i)?,
            };
            train_from(inst, &cfg_i, policy, references[*i]).map_err(AppError::from)
        };

    let outcomes: Vec<TrainOutcome> = match jobs {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| AppError::Usage(format!("cannot build thread pool: {e}")))?;
            pool.install(|| {
                jobs_units
                    .par_iter()
                    .map(run_one)
                    .collect::<Result<Vec<_>>>()
            })?
        }
        None => jobs_units
            .par_iter()
            .map(run_one)
            .collect::<Result<Vec<_>>>()?,
    };

    // All writes happen sequentially in instance order.
    for (inst, outcome) in instances.iter().zip(&outcomes) {
        let metrics_path = out.join("metrics").join(format!("{}.csv", inst.id));
        fs::write(&metrics_path, metrics_csv(&outcome.metrics))
            .map_err(|e| AppError::io(&metrics_path, e))?;
        let ckpt_path = out.join("checkpoints").join(format!("{}.json", inst.id));
        fs::write(&ckpt_path, outcome.policy.to_json()).map_err(|e| AppError::io(&ckpt_path, e))?;
    }

    let summary = summarize(cfg, instances, &outcomes, DEFAULT_GAP_THRESHOLD);
    let summary_path = out.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    fs::write(&summary_path, body).map_err(|e| AppError::io(&summary_path, e))?;

    let manifest = RunManifest {
        tool: "preftour".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        instances_path: instances_path.display().to_string(),
        instance_ids: instances.iter().map(|i| i.id.clone()).collect(),
        instance_seeds: (0..instances.len())
            .map(|i| cfg.for_instance(i as u64).seed)
            .collect(),
        artifacts: Artifacts {
            metrics_dir: "metrics".into(),
            checkpoints_dir: "checkpoints".into(),
            summary: "summary.json".into(),
        },
        timings: Timings {
            started_unix_ms,
            wall_ms: started.elapsed().as_millis(),
        },
        status: "finished".into(),
    };
    let manifest_body =
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    let path = manifest_path(out);
    fs::write(&path, manifest_body).map_err(|e| AppError::io(&path, e))?;

    Ok(outcomes)
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut body = String::with_capacity(metrics.len() * 64);
    body.push_str(StepMetrics::CSV_HEADER);
    body.push('\n');
    for m in metrics {
        body.push_str(&m.csv_row());
        body.push('\n');
    }
    body
}

pub fn iters_to_gap(metrics: &[StepMetrics], threshold: f64) -> Option<usize> {
    metrics
        .iter()
        .find(|m| m.gap.is_some_and(|g| g <= threshold))
        .map(|m| m.step)
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn summarize(
    cfg: &TrainConfig,
    instances: &[Instance],
    outcomes: &[TrainOutcome],
    gap_threshold: f64,
) -> RunSummary {
    let per_instance: Vec<InstanceSummary> = instances
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (inst, out))| {
            let last = out.metrics.last().expect("runs have at least one step");
            InstanceSummary {
                id: inst.id.clone(),
                seed: cfg.for_instance(i as u64).seed,
                best_gap: last.gap,
                iters_to_gap: iters_to_gap(&out.metrics, gap_threshold),
                final_consistency: last.consistency,
                final_loss: last.loss,
            }
        })
        .collect();

    let gaps: Vec<f64> = per_instance.iter().filter_map(|s| s.best_gap).collect();
    let consistencies: Vec<f64> = per_instance
        .iter()
        .filter_map(|s| s.final_consistency)
        .collect();
    let early = (outcomes[0].metrics.len() / 5).max(1);
    let entropies: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            o.metrics[..early.min(o.metrics.len())]
                .iter()
                .map(|m| m.trajectory_entropy)
                .sum::<f64>()
                / early.min(o.metrics.len()) as f64
        })
        .collect();
    // Censor unreached thresholds at one past the horizon so the median is
    // still defined.
    let horizon = outcomes[0].metrics.len() + 1;
    let iters: Vec<f64> = per_instance
        .iter()
        .map(|s| s.iters_to_gap.unwrap_or(horizon) as f64)
        .collect();

    RunSummary {
        instances: instances.len(),
        mean_best_gap: mean(&gaps),
        mean_final_consistency: mean(&consistencies),
        mean_trajectory_entropy_first_fifth: mean(&entropies).unwrap_or(0.0),
        median_iters_to_gap: median(iters),
        gap_threshold,
        per_instance,
    }
}
