use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub rng_seed: u64,
    pub weight_seed: u64,
    pub instance_seed: u64,
}

/// Record of one `search` run and every file it left behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: RunConfig,
    pub evaluator: String,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub wall_time_secs: f64,
    pub complete: bool,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hash_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST_NAME {
            continue;
        }
        let (sha256, bytes) = hash_file(&path)?;
        out.push(Artifact {
            path: rel,
            sha256,
            bytes,
        });
    }
    Ok(())
}

impl RunManifest {
    /// Describes the run and hashes every file under `out_dir` except the manifest.
    #[allow(clippy::too_many_arguments)]
    pub fn collect(
        out_dir: &Path,
        config: &RunConfig,
        evaluator: String,
        command: Vec<String>,
        resumed_from: Option<String>,
        started_unix: u64,
        wall_time_secs: f64,
        complete: bool,
    ) -> Result<Self, CliError> {
        let mut artifacts = Vec::new();
        walk(out_dir, out_dir, &mut artifacts)?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config: config.clone(),
            evaluator,
            seeds: Seeds {
                rng_seed: config.ga.rng_seed,
                weight_seed: config.toy.weight_seed,
                instance_seed: config.evaluator.instance_seed,
            },
            resumed_from,
            started_unix,
            finished_unix: unix_now(),
            wall_time_secs,
            complete,
            artifacts,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))
    }

    /// Artifacts whose current contents no longer match the recorded hash.
    pub fn verify(&self, out_dir: &Path) -> Result<Vec<String>, CliError> {
        let mut changed = Vec::new();
        for a in &self.artifacts {
            let path = out_dir.join(&a.path);
            if !path.exists() || hash_file(&path)?.0 != a.sha256 {
                changed.push(a.path.clone());
            }
        }
        Ok(changed)
    }
}
