//! Subcommand implementations.

use std::fs;
use std::path::Path;

use preftour::instance::{generate_uniform, Instance, Tour};
use preftour::local_search::{two_opt, LsConfig, LsStrategy};
use preftour::oracle::{solve_held_karp, HELD_KARP_LIMIT};
use preftour::policy::{greedy_decode, init_heatmap, sample_tours, InitMode};
use preftour::seed;
use preftour::trainer::{advantage_report, Algorithm, TrainConfig, TrainOutcome};
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::run::{
    execute_training, iters_to_gap, median, read_manifest, RunManifest, DEFAULT_GAP_THRESHOLD,
};
use crate::store;

pub fn generate(n: usize, count: usize, seed: u64, out: &Path) -> Result<()> {
    let instances = generate_uniform(n, count, seed)?;
    store::write_instances(out, &instances, n, seed)?;
    println!(
        "wrote {count} instances (n={n}, seed={seed}) to {}",
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    config_path: &Path,
    instances_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    jobs: Option<usize>,
    resume: bool,
    from_checkpoints: Option<&Path>,
) -> Result<()> {
    let mut cfg = store::load_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(manifest) = read_manifest(out)? {
        if manifest.status == "finished" {
            if resume {
                println!("run at {} already finished; nothing to do", out.display());
                return Ok(());
            }
            return Err(AppError::Usage(format!(
                "{} already contains a finished run (pass --resume to accept it, or choose a new --out)",
                out.display()
            )));
        }
    }
    let instances = store::load_instances(instances_path)?;
    let starts = match from_checkpoints {
        Some(dir) => Some(load_starts(dir, &instances)?),
        None => None,
    };
    let outcomes = execute_training("train", &cfg, &instances, instances_path, starts, out, jobs)?;
    let reached = outcomes
        .iter()
        .filter(|o| iters_to_gap(&o.metrics, DEFAULT_GAP_THRESHOLD).is_some())
        .count();
    println!(
        "trained {} instances; {reached} reached a {:.0}% gap; artifacts in {}",
        instances.len(),
        DEFAULT_GAP_THRESHOLD * 100.0,
        out.display()
    );
    Ok(())
}

/// Fine-tune from checkpoints: a training run whose standard phase is empty.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    config_path: &Path,
    instances_path: &Path,
    checkpoints: &Path,
    out: &Path,
    steps: Option<usize>,
    seed_override: Option<u64>,
    jobs: Option<usize>,
) -> Result<()> {
    let mut cfg = store::load_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.steps = 0;
    if let Some(t_ft) = steps {
        cfg.finetune_steps = t_ft;
    }
    if cfg.finetune_steps == 0 {
        return Err(AppError::Usage(
            "finetune needs finetune_steps > 0 (set it in the config or pass --steps)".into(),
        ));
    }
    cfg.validate().map_err(AppError::from)?;
    let instances = store::load_instances(instances_path)?;
    let starts = load_starts(checkpoints, &instances)?;
    execute_training(
        "finetune",
        &cfg,
        &instances,
        instances_path,
        Some(starts),
        out,
        jobs,
    )?;
    println!(
        "fine-tuned {} instances for {} steps; artifacts in {}",
        instances.len(),
        cfg.finetune_steps,
        out.display()
    );
    Ok(())
}

fn load_starts(dir: &Path, instances: &[Instance]) -> Result<Vec<preftour::policy::HeatmapPolicy>> {
    instances
        .iter()
        .map(|inst| store::checkpoint_for(dir, &inst.id))
        .collect()
}

#[derive(Serialize)]
struct CompareSummary {
    gap_threshold: f64,
    /// Median over instances of iters_b / iters_a; > 1 means config A
    /// reaches the threshold faster.
    speedup_a_over_b: f64,
    median_iters_a: Option<f64>,
    median_iters_b: Option<f64>,
    mean_best_gap_a: Option<f64>,
    mean_best_gap_b: Option<f64>,
    mean_entropy_first_fifth_a: f64,
    mean_entropy_first_fifth_b: f64,
    mean_final_consistency_a: Option<f64>,
    mean_final_consistency_b: Option<f64>,
    censored_at: usize,
    per_instance: Vec<CompareRow>,
}

#[derive(Serialize)]
struct CompareRow {
    id: String,
    iters_a: Option<usize>,
    iters_b: Option<usize>,
    best_gap_a: Option<f64>,
    best_gap_b: Option<f64>,
    /// best_gap_a - best_gap_b; negative favors A.
    gap_delta: Option<f64>,
    /// iters_b / iters_a with unreached runs censored; > 1 favors A.
    iters_ratio: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    config_a_path: &Path,
    config_b_path: &Path,
    instances_path: &Path,
    out: &Path,
    gap_threshold: f64,
    seed_override: Option<u64>,
    jobs: Option<usize>,
) -> Result<()> {
    let mut cfg_a = store::load_config(config_a_path)?;
    let mut cfg_b = store::load_config(config_b_path)?;
    if let Some(seed) = seed_override {
        cfg_a.seed = seed;
        cfg_b.seed = seed;
    } else if cfg_a.seed != cfg_b.seed {
        return Err(AppError::Usage(format!(
            "paired comparison needs one seed for both sides, got {} and {} (override with --seed)",
            cfg_a.seed, cfg_b.seed
        )));
    }
    if cfg_a.steps + cfg_a.finetune_steps != cfg_b.steps + cfg_b.finetune_steps {
        return Err(AppError::Usage(format!(
            "paired comparison needs matching step budgets, got {} and {}",
            cfg_a.steps + cfg_a.finetune_steps,
            cfg_b.steps + cfg_b.finetune_steps
        )));
    }
    let instances = store::load_instances(instances_path)?;
    let a = execute_training(
        "train",
        &cfg_a,
        &instances,
        instances_path,
        None,
        &out.join("a"),
        jobs,
    )?;
    let b = execute_training(
        "train",
        &cfg_b,
        &instances,
        instances_path,
        None,
        &out.join("b"),
        jobs,
    )?;

    let horizon = cfg_a.steps + cfg_a.finetune_steps + 1;
    let rows: Vec<CompareRow> = instances
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(inst, (oa, ob))| {
            let ia = iters_to_gap(&oa.metrics, gap_threshold);
            let ib = iters_to_gap(&ob.metrics, gap_threshold);
            let ga = oa.metrics.last().unwrap().gap;
            let gb = ob.metrics.last().unwrap().gap;
            CompareRow {
                id: inst.id.clone(),
                iters_a: ia,
                iters_b: ib,
                best_gap_a: ga,
                best_gap_b: gb,
                gap_delta: ga.zip(gb).map(|(x, y)| x - y),
                iters_ratio: ib.unwrap_or(horizon) as f64 / ia.unwrap_or(horizon) as f64,
            }
        })
        .collect();

    let mean_gap = |outs: &[TrainOutcome]| {
        let gaps: Vec<f64> = outs
            .iter()
            .filter_map(|o| o.metrics.last().unwrap().gap)
            .collect();
        if gaps.is_empty() {
            None
        } else {
            Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
        }
    };
    let mean_entropy = |outs: &[TrainOutcome]| {
        let early = (outs[0].metrics.len() / 5).max(1);
        outs.iter()
            .map(|o| {
                o.metrics[..early]
                    .iter()
                    .map(|m| m.trajectory_entropy)
                    .sum::<f64>()
                    / early as f64
            })
            .sum::<f64>()
            / outs.len() as f64
    };
    let mean_consistency = |outs: &[TrainOutcome]| {
        let vals: Vec<f64> = outs
            .iter()
            .filter_map(|o| o.metrics.last().unwrap().consistency)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    let summary = CompareSummary {
        gap_threshold,
        speedup_a_over_b: median(rows.iter().map(|r| r.iters_ratio).collect())
            .expect("at least one instance"),
        median_iters_a: median(
            rows.iter()
                .map(|r| r.iters_a.unwrap_or(horizon) as f64)
                .collect(),
        ),
        median_iters_b: median(
            rows.iter()
                .map(|r| r.iters_b.unwrap_or(horizon) as f64)
                .collect(),
        ),
        mean_best_gap_a: mean_gap(&a),
        mean_best_gap_b: mean_gap(&b),
        mean_entropy_first_fifth_a: mean_entropy(&a),
        mean_entropy_first_fifth_b: mean_entropy(&b),
        mean_final_consistency_a: mean_consistency(&a),
        mean_final_consistency_b: mean_consistency(&b),
        censored_at: horizon,
        per_instance: rows,
    };
    let path = out.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    fs::write(&path, &body).map_err(|e| AppError::io(&path, e))?;
    println!(
        "compared {} instances: speedup (a over b) {:.3}, mean best gap a {:?} b {:?}; summary in {}",
        instances.len(),
        summary.speedup_a_over_b,
        summary.mean_best_gap_a,
        summary.mean_best_gap_b,
        path.display()
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DecodeMode {
    Greedy,
    SampleBestK,
}

#[derive(Serialize)]
struct EvaluateReport {
    decode: String,
    k: Option<usize>,
    mean_gap: f64,
    exact_references: usize,
    per_instance: Vec<EvalRow>,
}

#[derive(Serialize)]
struct EvalRow {
    id: String,
    length: f64,
    reference_length: f64,
    gap: f64,
    reference: String,
    exact: bool,
}

pub fn evaluate(
    checkpoints: &Path,
    instances_path: &Path,
    decode: DecodeMode,
    k: usize,
    temperature: Option<f64>,
    out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    if decode == DecodeMode::SampleBestK && k == 0 {
        return Err(AppError::Usage(
            "--k must be ≥ 1 for sample-best-k decoding".into(),
        ));
    }
    if let Some(t) = temperature {
        // Negated form so NaN fails validation too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(t > 0.0) {
            return Err(AppError::Usage(format!(
                "--temperature must be > 0, got {t}"
            )));
        }
    }
    let instances = store::load_instances(instances_path)?;
    let mut rows = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let mut policy = store::checkpoint_for(checkpoints, &inst.id)?;
        if let Some(t) = temperature {
            policy.temperature = t;
        }
        if policy.n != inst.n {
            return Err(AppError::Usage(format!(
                "checkpoint n={} does not match instance {} (n={})",
                policy.n, inst.id, inst.n
            )));
        }
        let tour = match decode {
            DecodeMode::Greedy => greedy_decode(&policy, inst),
            DecodeMode::SampleBestK => {
                let mut rng = seed::eval_rng(seed, i as u64);
                let batch = sample_tours(&policy, inst, k.max(2), &mut rng)?;
                let best = batch
                    .tours
                    .iter()
                    .min_by(|a, b| a.length.partial_cmp(&b.length).unwrap())
                    .expect("batch is nonempty");
                best.clone()
            }
        };
        let (reference_length, reference, exact) = reference_length(inst)?;
        rows.push(EvalRow {
            id: inst.id.clone(),
            length: tour.length,
            gap: (tour.length - reference_length) / reference_length,
            reference_length,
            reference,
            exact,
        });
    }
    let report = EvaluateReport {
        decode: match decode {
            DecodeMode::Greedy => "greedy".into(),
            DecodeMode::SampleBestK => "sample_best_k".into(),
        },
        k: (decode == DecodeMode::SampleBestK).then_some(k),
        mean_gap: rows.iter().map(|r| r.gap).sum::<f64>() / rows.len() as f64,
        exact_references: rows.iter().filter(|r| r.exact).count(),
        per_instance: rows,
    };
    let body = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    match out {
        Some(path) => {
            fs::write(path, &body).map_err(|e| AppError::io(path, e))?;
            println!(
                "mean gap {:.6}; report in {}",
                report.mean_gap,
                path.display()
            );
        }
        None => println!("{body}"),
    }
    Ok(())
}

/// Exact optimum for small instances; converged 2-opt from a
/// nearest-neighbor start otherwise (flagged as non-exact).
fn reference_length(inst: &Instance) -> Result<(f64, String, bool)> {
    if inst.n <= HELD_KARP_LIMIT {
        let oracle = solve_held_karp(inst)?;
        Ok((oracle.best_length, "held_karp".into(), true))
    } else {
        let warm = init_heatmap(inst, InitMode::NegDistance, 1.0)?;
        let start = greedy_decode(&warm, inst);
        let cfg = LsConfig {
            max_iters: 1_000_000,
            strategy: LsStrategy::BestImprovement,
        };
        let mut rng = seed::eval_rng(0, 0);
        let refined: Tour = two_opt(inst, &start, &cfg, &mut rng)?;
        Ok((refined.length, "two_opt".into(), false))
    }
}

pub fn analyze(run: &Path, instances_path: &Path, out: &Path) -> Result<()> {
    let manifest: RunManifest = read_manifest(run)?.ok_or_else(|| {
        AppError::Usage(format!(
            "{}: not a run directory (no manifest)",
            run.display()
        ))
    })?;
    let instances = store::load_instances(instances_path)?;
    fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;

    // Per-tour advantage exports: the run's algorithm next to the
    // reinforce baseline on the same sampled batch.
    let cfg = manifest.config.clone();
    let rf_cfg = TrainConfig {
        algorithm: Algorithm::Reinforce,
        ..cfg.clone()
    };
    for (i, inst) in instances.iter().enumerate() {
        let policy = store::checkpoint_for(run, &inst.id)?;
        if policy.n != inst.n {
            return Err(AppError::Usage(format!(
                "checkpoint n={} does not match instance {} (n={})",
                policy.n, inst.id, inst.n
            )));
        }
        let mut rng = seed::eval_rng(manifest.seed, i as u64);
        let batch = sample_tours(&policy, inst, cfg.samples_per_step.max(2), &mut rng)?;
        let main_rows = advantage_report(&batch, &cfg)?;
        let rf_rows = advantage_report(&batch, &rf_cfg)?;
        let mut body = String::from("rank,length,advantage,advantage_reinforce\n");
        for (rank, ((len, adv), (_, rf_adv))) in main_rows.iter().zip(&rf_rows).enumerate() {
            body.push_str(&format!("{rank},{len},{adv},{rf_adv}\n"));
        }
        let path = out.join(format!("advantages_{}.csv", inst.id));
        fs::write(&path, body).map_err(|e| AppError::io(&path, e))?;
    }

    // Mean training curves across instances from the recorded metrics.
    let curves = aggregate_metrics(run, &manifest)?;
    let path = out.join("training_curves.csv");
    fs::write(&path, curves).map_err(|e| AppError::io(&path, e))?;
    println!(
        "analysis for {} instances written to {}",
        instances.len(),
        out.display()
    );
    Ok(())
}

fn aggregate_metrics(run: &Path, manifest: &RunManifest) -> Result<String> {
    struct Acc {
        mean_reward: f64,
        gap: Vec<f64>,
        entropy: f64,
        consistency: Vec<f64>,
        loss: f64,
    }
    let mut steps: Vec<Acc> = Vec::new();
    let count = manifest.instance_ids.len();
    for id in &manifest.instance_ids {
        let path = run
            .join(&manifest.artifacts.metrics_dir)
            .join(format!("{id}.csv"));
        let body = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
        for (row, line) in body.lines().skip(1).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(AppError::Usage(format!(
                    "{}: malformed metrics row {}",
                    path.display(),
                    row + 2
                )));
            }
            if steps.len() <= row {
                steps.push(Acc {
                    mean_reward: 0.0,
                    gap: Vec::new(),
                    entropy: 0.0,
                    consistency: Vec::new(),
                    loss: 0.0,
                });
            }
            let acc = &mut steps[row];
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| {
                    AppError::Usage(format!("{}: bad number {s:?}: {e}", path.display()))
                })
            };
            acc.mean_reward += parse(fields[1])?;
            if !fields[3].is_empty() {
                acc.gap.push(parse(fields[3])?);
            }
            acc.entropy += parse(fields[4])?;
            if !fields[5].is_empty() {
                acc.consistency.push(parse(fields[5])?);
            }
            acc.loss += parse(fields[6])?;
        }
    }
    let mut body = String::from("step,mean_reward,gap,entropy,consistency,loss\n");
    for (row, acc) in steps.iter().enumerate() {
        let opt_mean = |xs: &[f64]| {
            if xs.is_empty() {
                String::new()
            } else {
                (xs.iter().sum::<f64>() / xs.len() as f64).to_string()
            }
        };
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row + 1,
            acc.mean_reward / count as f64,
            opt_mean(&acc.gap),
            acc.entropy / count as f64,
            opt_mean(&acc.consistency),
            acc.loss / count as f64,
        ));
    }
    Ok(body)
}
