//! Optional TOML configuration. Every key mirrors a command-line flag and
//! flags take precedence over file values, which take precedence over the
//! built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub fuse: FuseConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub gt_spacing: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dmin: Option<f64>,
    pub dmax: Option<f64>,
    pub iterations: Option<usize>,
    pub sources: Option<usize>,
    pub oracle: Option<String>,
    pub weight_oracle: Option<String>,
    pub weights: Option<PathBuf>,
    pub trace: Option<bool>,
    pub workers: Option<usize>,
    pub format: Option<String>,
    #[serde(default)]
    pub zncc: ZnccSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZnccSection {
    pub window: Option<usize>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseConfig {
    pub scene: Option<PathBuf>,
    pub depths: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sg: Option<usize>,
    pub g: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub tau: Option<f64>,
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag value if given, else the config value.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Parses a config-file string against a clap value enum.
pub fn parse_enum<T: clap::ValueEnum>(value: Option<String>, key: &str) -> Result<Option<T>, CliError> {
    value
        .map(|v| T::from_str(&v, true).map_err(|_| CliError::Usage(format!("config key {key}: unknown value '{v}'"))))
        .transpose()
}

pub fn require<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{name} (flag or config file)")))
}
