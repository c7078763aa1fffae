//! Declarative experiment configuration.
//!
//! One TOML document describes an experiment end to end; subcommands
//! read the sections they need and reject configurations that are
//! missing them. Two fields accept either a literal number or a named
//! strategy: `schedule.sigma1` may be `"from-data"` and
//! `sampler.epsilon` may be `"solve"`. After resolution every field is
//! literal, and the resolved document is echoed into the output
//! directory so a run can be repeated byte for byte.
//!
//! Seed convention: data generation uses `seed`, chain initialization
//! `seed + 1`, and Langevin noise `seed + 2`; training consumes `seed`
//! through its own stream. The `--seed` flag replaces the value from
//! the file before any of this derivation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Data>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Train>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolate: Option<Interpolate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig2: Option<Fig2>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    /// Data dimension every section must agree on.
    pub dims: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Data {
    /// The five binary training batches under `path`.
    Cifar10 {
        #[serde(default = "default_cifar_dir")]
        path: PathBuf,
    },
    /// The binary test batch under `path`.
    Cifar10Test {
        #[serde(default = "default_cifar_dir")]
        path: PathBuf,
    },
    /// A matrix file written by this tool.
    Matrix { path: PathBuf },
    /// Synthetic draws from an isotropic Gaussian mixture.
    GaussianMixture {
        centers: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        component_sigma: f64,
        count: usize,
    },
}

fn default_cifar_dir() -> PathBuf {
    PathBuf::from("data/cifar-10-batches-bin")
}

/// A literal value or a named strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Literal(f64),
    Named(String),
}

impl Setting {
    #[cfg(test)]
    pub fn literal(&self) -> Option<f64> {
        match self {
            Setting::Literal(v) => Some(*v),
            Setting::Named(_) => None,
        }
    }

    /// The literal value, or an error naming the field and the one
    /// strategy keyword it accepts.
    pub fn expect(&self, field: &str, keyword: &str) -> Result<Option<f64>, CliError> {
        match self {
            Setting::Literal(v) => Ok(Some(*v)),
            Setting::Named(name) if name == keyword => Ok(None),
            Setting::Named(name) => Err(CliError::Config(format!(
                "{field} must be a number or \"{keyword}\", got \"{name}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Widest scale: a number, or "from-data" for the maximum pairwise
    /// distance of the configured data.
    pub sigma1: Setting,
    pub sigma_l: f64,
    /// Adjacent-scale overlap target; ignored when `length` is given.
    #[serde(default = "default_target_c")]
    pub target_c: f64,
    /// Explicit scale count; overrides the overlap target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// Row subsample for pairwise-distance scans.
    #[serde(default = "default_subsample")]
    pub subsample: usize,
}

fn default_target_c() -> f64 {
    0.5
}

fn default_subsample() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampler {
    #[serde(default = "default_steps")]
    pub steps_per_scale: usize,
    /// Step base: a number, or "solve" for the variance-flow optimum.
    #[serde(default = "default_epsilon")]
    pub epsilon: Setting,
    #[serde(default = "default_true")]
    pub denoise: bool,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub init: Init,
    /// Initial states for `init = "from-file"`, a matrix file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_path: Option<PathBuf>,
    /// Record a replayable noise tape per chain.
    #[serde(default)]
    pub trace: bool,
}

impl Default for Sampler {
    fn default() -> Self {
        Self {
            steps_per_scale: default_steps(),
            epsilon: default_epsilon(),
            denoise: true,
            chains: default_chains(),
            init: Init::default(),
            init_path: None,
            trace: false,
        }
    }
}

fn default_steps() -> usize {
    5
}

fn default_epsilon() -> Setting {
    Setting::Named("solve".to_string())
}

fn default_true() -> bool {
    true
}

fn default_chains() -> usize {
    100
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    #[default]
    Uniform,
    Gaussian,
    FromFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_ema")]
    pub ema_decay: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_depth")]
    pub hidden_layers: usize,
}

impl Default for Train {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            ema_decay: default_ema(),
            hidden: default_hidden(),
            hidden_layers: default_depth(),
        }
    }
}

fn default_iterations() -> usize {
    2000
}

fn default_batch() -> usize {
    128
}

fn default_lr() -> f64 {
    1e-3
}

fn default_ema() -> f64 {
    0.999
}

fn default_hidden() -> usize {
    128
}

fn default_depth() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    /// A trained checkpoint; `use_ema` picks the averaged weights.
    Checkpoint {
        path: PathBuf,
        #[serde(default = "default_true")]
        use_ema: bool,
    },
    /// Exact score of an isotropic Gaussian mixture.
    Mixture {
        centers: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        component_sigma: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interpolate {
    pub tape_a: PathBuf,
    pub tape_b: PathBuf,
    /// Number of interior blends to generate.
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2 {
    /// Widest scale of the wide run.
    #[serde(default = "default_sigma_wide")]
    pub sigma1_wide: f64,
    /// Widest scale of the narrow run.
    #[serde(default = "default_sigma_narrow")]
    pub sigma1_narrow: f64,
}

impl Default for Fig2 {
    fn default() -> Self {
        Self {
            sigma1_wide: default_sigma_wide(),
            sigma1_narrow: default_sigma_narrow(),
        }
    }
}

fn default_sigma_wide() -> f64 {
    50.0
}

fn default_sigma_narrow() -> f64 {
    1.0
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.experiment.dims == 0 {
            return Err(CliError::Config(
                "experiment.dims must be at least one".to_string(),
            ));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn schedule(&self) -> Result<&Schedule, CliError> {
        self.schedule
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [schedule] section".to_string()))
    }

    pub fn data(&self) -> Result<&Data, CliError> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [data] section".to_string()))
    }

    pub fn model(&self) -> Result<&Model, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [model] section".to_string()))
    }

    pub fn interpolate(&self) -> Result<&Interpolate, CliError> {
        self.interpolate
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [interpolate] section".to_string()))
    }
}
