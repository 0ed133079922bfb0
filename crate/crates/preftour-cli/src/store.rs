//! On-disk layout: instance directories, configs, and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use preftour::instance::{parse_tsplib, Instance};
use preftour::policy::HeatmapPolicy;
use preftour::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Index written next to generated instances.
#[derive(Serialize, Deserialize)]
pub struct InstanceIndex {
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub files: Vec<String>,
}

pub fn write_instances(dir: &Path, instances: &[Instance], n: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut files = Vec::with_capacity(instances.len());
    for inst in instances {
        let name = format!("{}.json", inst.id);
        let path = dir.join(&name);
        fs::write(&path, inst.to_json()).map_err(|e| AppError::io(&path, e))?;
        files.push(name);
    }
    let index = InstanceIndex {
        n,
        count: instances.len(),
        seed,
        files,
    };
    let path = dir.join("index.json");
    let body = serde_json::to_string_pretty(&index).expect("index serialization cannot fail");
    fs::write(&path, body).map_err(|e| AppError::io(&path, e))?;
    Ok(())
}

/// Load instances from a directory (index order if an index exists, sorted
/// filename order otherwise) or from a single `.json` / `.tsp` file.
pub fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    if path.is_file() {
        return Ok(vec![load_instance_file(path)?]);
    }
    if !path.is_dir() {
        return Err(AppError::Usage(format!(
            "{}: no such file or directory",
            path.display()
        )));
    }
    let index_path = path.join("index.json");
    let files: Vec<PathBuf> = if index_path.is_file() {
        let body = fs::read_to_string(&index_path).map_err(|e| AppError::io(&index_path, e))?;
        let index: InstanceIndex = serde_json::from_str(&body)
            .map_err(|e| AppError::Usage(format!("{}: {e}", index_path.display())))?;
        index.files.iter().map(|f| path.join(f)).collect()
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| AppError::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("json") | Some("tsp")
                ) && p.file_name().and_then(|f| f.to_str()) != Some("index.json")
            })
            .collect();
        files.sort();
        files
    };
    if files.is_empty() {
        return Err(AppError::Usage(format!(
            "{}: no instance files found",
            path.display()
        )));
    }
    files.iter().map(|f| load_instance_file(f)).collect()
}

fn load_instance_file(path: &Path) -> Result<Instance> {
    let body = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("tsp") => parse_tsplib(&body),
        _ => Instance::from_json(&body),
    };
    parsed.map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
}

/// Read and validate a flat TOML training config.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let body = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let cfg: TrainConfig =
        toml::from_str(&body).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn load_checkpoint(path: &Path) -> Result<HeatmapPolicy> {
    let body = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    HeatmapPolicy::from_json(&body).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
}

/// Resolve the checkpoint for `id`: either `<path>/checkpoints/<id>.json`
/// (a run directory), `<path>/<id>.json` (a bare checkpoint directory), or
/// `path` itself when it is a single checkpoint file.
pub fn checkpoint_for(path: &Path, id: &str) -> Result<HeatmapPolicy> {
    if path.is_file() {
        return load_checkpoint(path);
    }
    let in_run = path.join("checkpoints").join(format!("{id}.json"));
    if in_run.is_file() {
        return load_checkpoint(&in_run);
    }
    let bare = path.join(format!("{id}.json"));
    if bare.is_file() {
        return load_checkpoint(&bare);
    }
    Err(AppError::Usage(format!(
        "no checkpoint for instance {id} under {}",
        path.display()
    )))
}
