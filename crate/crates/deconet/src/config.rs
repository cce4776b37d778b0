//! Run configuration: a single TOML file with flat key/value sections.
//! CLI flags override file values. Every output file carries the config hash
//! so runs can be traced back to their exact settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operators::InitScheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemConfig {
    /// Ambient dimension n.
    pub n: usize,
    /// Measurement count m (< n).
    pub m: usize,
    /// Redundancy N of the learnable operator (> n).
    pub redundancy: usize,
    /// Layer / iteration count L.
    pub layers: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            n: 100,
            m: 25,
            redundancy: 500,
            layers: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l_tilde: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mu: 100.0,
            alpha: 0.9,
            beta: 0.9,
            l_tilde: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Total sample count (train + test).
    pub samples: usize,
    pub train_frac: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// "synthetic" or "mnist".
    pub kind: String,
    /// IDX image file for kind = "mnist".
    pub idx_path: Option<String>,
    /// 2x2 average-pool MNIST images before vectorizing.
    pub downsample: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            samples: 2500,
            train_frac: 0.8,
            noise_std: 1e-4,
            seed: 1,
            kind: "synthetic".into(),
            idx_path: None,
            downsample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// "normal" or "beta".
    pub scheme: String,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            scheme: "normal".into(),
            beta_a: 2.0,
            beta_b: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Spectral cap on W after each step; 0 disables projection.
    pub lambda_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 128,
            patience: 10,
            max_epochs: 200,
            lambda_cap: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub delta: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { delta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub bounds: BoundsConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.problem;
        if p.n < 2 || p.m < 1 || p.layers < 1 {
            return Err(ConfigError::Invalid(format!(
                "counts must be positive (n >= 2), got n={}, m={}, layers={}",
                p.n, p.m, p.layers
            )));
        }
        if p.m >= p.n {
            return Err(ConfigError::Invalid(format!(
                "need m < n, got m={}, n={}",
                p.m, p.n
            )));
        }
        if p.redundancy <= p.n {
            return Err(ConfigError::Invalid(format!(
                "need redundancy > n for the learnable operator, got N={}, n={}",
                p.redundancy, p.n
            )));
        }
        if !(self.schedule.mu > 1.0) {
            return Err(ConfigError::Invalid("schedule.mu must exceed 1".into()));
        }
        if !(self.schedule.l_tilde > self.schedule.mu) {
            return Err(ConfigError::Invalid(
                "schedule.l_tilde must exceed schedule.mu".into(),
            ));
        }
        for (name, v) in [("alpha", self.schedule.alpha), ("beta", self.schedule.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "schedule.{name} must lie in (0,1), got {v}"
                )));
            }
        }
        if self.data.samples < 2 {
            return Err(ConfigError::Invalid("data.samples must be >= 2".into()));
        }
        if !(self.data.train_frac > 0.0 && self.data.train_frac < 1.0) {
            return Err(ConfigError::Invalid("data.train_frac must lie in (0,1)".into()));
        }
        if self.data.noise_std < 0.0 {
            return Err(ConfigError::Invalid("data.noise_std must be >= 0".into()));
        }
        match self.init.scheme.as_str() {
            "normal" => {}
            "beta" => {
                if self.init.beta_a <= 0.0 || self.init.beta_b <= 0.0 {
                    return Err(ConfigError::Invalid(
                        "init.beta_a and init.beta_b must be positive".into(),
                    ));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "init.scheme must be \"normal\" or \"beta\", got {other:?}"
                )));
            }
        }
        if self.train.batch == 0 || self.train.max_epochs == 0 || self.train.patience == 0 {
            return Err(ConfigError::Invalid(
                "train.batch, train.patience and train.max_epochs must be >= 1".into(),
            ));
        }
        if self.train.lambda_cap < 0.0 {
            return Err(ConfigError::Invalid("train.lambda_cap must be >= 0".into()));
        }
        if !(self.bounds.delta > 0.0 && self.bounds.delta < 1.0) {
            return Err(ConfigError::Invalid("bounds.delta must lie in (0,1)".into()));
        }
        match self.data.kind.as_str() {
            "synthetic" => {}
            "mnist" => {
                if self.data.idx_path.is_none() {
                    return Err(ConfigError::Invalid(
                        "data.idx_path is required for kind = \"mnist\"".into(),
                    ));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "data.kind must be \"synthetic\" or \"mnist\", got {other:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn init_scheme(&self) -> InitScheme {
        match self.init.scheme.as_str() {
            "beta" => InitScheme::Beta {
                a: self.init.beta_a,
                b: self.init.beta_b,
            },
            _ => InitScheme::Normal,
        }
    }

    /// FNV-1a over the canonical serialization, as a hex string.
    pub fn hash(&self) -> String {
        let s = self.to_toml_string();
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in s.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
