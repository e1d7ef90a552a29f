//! Declarative pipeline configuration.
//!
//! All knobs live in one TOML file with CLI flags taking precedence.
//! Parsing is strict: unknown keys are rejected. Every command writes a
//! resolved-config snapshot next to its outputs; the snapshot is the only
//! artifact carrying a timestamp, so data outputs stay byte-identical
//! across reruns.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;
use crate::types::{EstimatorKind, FusionConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    /// Estimators to run; both by default.
    pub estimators: Option<Vec<EstimatorKind>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub score: ScoreConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::ParseFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// File config when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<PipelineConfig> {
        match path {
            Some(path) => PipelineConfig::load(path),
            None => Ok(PipelineConfig::default()),
        }
    }
}

/// Resolved settings actually used by a run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct ConfigSnapshot<'a> {
    pub command: &'a str,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical reruns.
    pub timestamp_unix: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: &'a PipelineConfig,
}

pub fn write_snapshot(
    command: &str,
    primary_output: &Path,
    inputs: &[&Path],
    outputs: &[&Path],
    config: &PipelineConfig,
) -> Result<()> {
    let snapshot = ConfigSnapshot {
        command,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        config,
    };
    let path = snapshot_path(primary_output);
    let text = serde_json::to_string_pretty(&snapshot)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn snapshot_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    name.push_str(".config.json");
    primary_output.with_file_name(name)
}

/// Resolves an output path against the `DADPO_OUT_DIR` environment
/// override: relative paths are joined under it, absolute paths pass
/// through.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os("DADPO_OUT_DIR") {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}
