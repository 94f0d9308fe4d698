use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::toynets::{Checkpoint, ModelSpec, Run, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: u32, iteration: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub epoch: u32,
    pub iteration: Option<u32>,
    /// Path relative to the run directory.
    pub file: String,
    pub sha256: String,
}

impl CheckpointEntry {
    pub fn for_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let bytes = checkpoint_bytes(ckpt)?;
        Ok(Self {
            epoch: ckpt.epoch,
            iteration: ckpt.iteration,
            file: checkpoint_file(ckpt.epoch, ckpt.iteration),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

fn checkpoint_file(epoch: u32, iteration: Option<u32>) -> String {
    match iteration {
        Some(i) => format!("ckpt/e{epoch:04}_i{i:05}.json"),
        None => format!("ckpt/e{epoch:04}.json"),
    }
}

fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    serde_json::to_vec(ckpt).map_err(|e| Error::Json {
        path: PathBuf::from(checkpoint_file(ckpt.epoch, ckpt.iteration)),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset_id: String,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub checkpoints: Vec<CheckpointEntry>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Training accuracy per epoch (classifiers only).
    pub accuracy_history: Vec<f64>,
    pub status: RunStatus,
}

/// Persists `run` under `root/runs/<run_id>/` and returns that directory.
///
/// Existing artifacts are never rewritten: a manifest already on disk must
/// match byte for byte, otherwise the call fails.
pub fn save_run(run: &Run, root: &Path) -> Result<PathBuf> {
    let dir = root.join("runs").join(&run.manifest.run_id);
    let manifest_path = dir.join("manifest.json");
    let mut manifest_bytes = serde_json::to_vec_pretty(&run.manifest).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    manifest_bytes.push(b'\n');
    if manifest_path.exists() {
        let existing = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        if existing != manifest_bytes {
            return Err(Error::Validation(format!(
                "{} already holds a different manifest; refusing to overwrite",
                dir.display()
            )));
        }
    }
    for (ckpt, entry) in run.checkpoints.iter().zip(&run.manifest.checkpoints) {
        let path = dir.join(&entry.file);
        if !path.exists() {
            super::write_atomic(&path, &checkpoint_bytes(ckpt)?)?;
        }
    }
    std::fs::create_dir_all(dir.join("features"))
        .map_err(|e| Error::io(dir.join("features"), e))?;
    if !manifest_path.exists() {
        super::write_atomic(&manifest_path, &manifest_bytes)?;
        let created = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        super::write_json(
            &dir.join("manifest.created.json"),
            &serde_json::json!({ "created_unix": created }),
        )?;
    }
    Ok(dir)
}

/// Loads a run directory. Missing checkpoint files are recorded in
/// [`Run::missing`]; a file whose hash disagrees with the manifest is an
/// error.
pub fn load_run(dir: &Path) -> Result<Run> {
    let manifest: RunManifest = super::read_json(&dir.join("manifest.json"))?;
    let mut checkpoints = Vec::with_capacity(manifest.checkpoints.len());
    let mut missing = Vec::new();
    for entry in &manifest.checkpoints {
        let path = dir.join(&entry.file);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                missing.push((entry.epoch, entry.iteration));
                continue;
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(Error::Validation(format!(
                "{} does not match its manifest hash",
                path.display()
            )));
        }
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        checkpoints.push(ckpt);
    }
    Ok(Run {
        manifest,
        checkpoints,
        missing,
    })
}
