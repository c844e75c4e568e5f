//! Experiment and suite configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// One experiment run. Relative paths resolve against the config file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model_file: PathBuf,
    pub experiment: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// An ordered list of experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub configs: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Parse errors carry serde's line and column.
fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl ExperimentConfig {
    /// Reads a config and resolves `model_file` and `out_dir`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = parse(path, &read(path)?)?;
        let base = parent(path);
        cfg.model_file = resolve(&base, &cfg.model_file);
        cfg.out_dir = cfg.out_dir.map(|d| resolve(&base, &d));
        Ok(cfg)
    }
}

impl SuiteConfig {
    /// Reads a suite and resolves its config paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut suite: Self = parse(path, &read(path)?)?;
        let base = parent(path);
        suite.configs = suite.configs.iter().map(|c| resolve(&base, c)).collect();
        Ok(suite)
    }
}

pub(crate) fn load_model(path: &Path) -> Result<bpire_core::EnvironmentModel, CliError> {
    let text = read(path)?;
    bpire_core::EnvironmentModel::from_json_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
