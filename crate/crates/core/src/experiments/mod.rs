//! Config-driven experiment runner. Each run writes CSV and JSON outputs
//! plus a `manifest.json` listing every emitted file.

mod config;
mod runners;

pub use config::{
    default_model, default_train, validate_config, E1Options, E2Options, E3Options, E4Options, E5Options,
    EvalConfig, ExperimentConfig, ExperimentId,
};
pub use runners::{
    E1Summary, E2Row, E2Summary, E3Run, E3Summary, E4Point, E4Summary, E5Point, E5Summary, ExperimentSummary,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Record of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Emitted files relative to the output directory, in write order.
    /// `manifest.json` itself is not listed.
    pub files: Vec<String>,
    /// The resolved configuration, sufficient to reproduce the run.
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: ExperimentSummary,
}

/// Tracks emitted files so a failed run can remove them.
pub(crate) struct OutputDir {
    dir: PathBuf,
    created: bool,
    files: Vec<PathBuf>,
}

impl OutputDir {
    fn open(dir: &Path) -> Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        // Probe writability up front rather than failing mid-run.
        let probe = dir.join(".cliplab-write-test");
        fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
        let _ = fs::remove_file(&probe);
        Ok(Self {
            dir: dir.to_path_buf(),
            created,
            files: Vec::new(),
        })
    }

    pub(crate) fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Registers a file before it is written, so a half-written file is also
    /// cleaned up.
    pub(crate) fn claim(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.files.push(p.clone());
        p
    }

    pub(crate) fn adopt(&mut self, paths: Vec<PathBuf>) {
        self.files.extend(paths);
    }

    pub(crate) fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.claim(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    fn relative_files(&self) -> Vec<String> {
        self.files
            .iter()
            .map(|p| {
                p.strip_prefix(&self.dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect()
    }

    fn cleanup(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        let _ = fs::remove_file(self.dir.join("manifest.json"));
        if self.created {
            // Only succeeds if nothing else lives there.
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Default output location when neither the config nor the caller names one.
pub fn default_output_dir(id: ExperimentId) -> PathBuf {
    PathBuf::from("runs").join(id.name())
}

/// Validates `config`, runs it and writes outputs under its `output_dir`
/// (or [`default_output_dir`]). On failure every file written so far is
/// removed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let resolved = config.resolved();
    let seed = resolved.seed_or_err()?;
    let dir = resolved
        .output_dir
        .clone()
        .unwrap_or_else(|| default_output_dir(resolved.experiment));
    let started = unix_ms();
    let mut out = OutputDir::open(&dir)?;
    let result = runners::run(&resolved, seed, &mut out)
        .and_then(|summary| finish(&mut out, &resolved, seed, started, summary));
    match result {
        Ok((manifest, summary)) => Ok(RunOutput { dir, manifest, summary }),
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

fn finish(
    out: &mut OutputDir,
    config: &ExperimentConfig,
    seed: u64,
    started: u64,
    summary: ExperimentSummary,
) -> Result<(RunManifest, ExperimentSummary)> {
    out.write_json("summary.json", &summary)?;
    let manifest = RunManifest {
        experiment: config.experiment,
        config_hash: config.hash(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        files: out.relative_files(),
        config: config.clone(),
    };
    let p = out.path("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    Ok((manifest, summary))
}
