//! Experiment configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{DEFAULT_MA_WINDOW, DEFAULT_SL_MARGIN};
use crate::env::EnvConfig;
use crate::marl::LearnerConfig;
use crate::trace::{generate_synthetic, load_traces, scenario_preset, GeneratorConfig, TraceError, TraceSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Where the trace comes from. Exactly one source per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    Files {
        vms: PathBuf,
        usage: PathBuf,
    },
    /// A named scenario; `seed` overrides its generator seed.
    Preset {
        name: String,
        seed: Option<u64>,
    },
    Generator {
        config: GeneratorConfig,
    },
    GeneratorFile {
        path: PathBuf,
    },
}

impl TraceSource {
    /// Generator settings for generated sources; `None` for files.
    pub fn generator_config(&self, base: &Path) -> Result<Option<GeneratorConfig>, ConfigError> {
        match self {
            TraceSource::Files { .. } => Ok(None),
            TraceSource::Preset { name, seed } => {
                let mut cfg = scenario_preset(name)?;
                if let Some(s) = seed {
                    cfg.rng_seed = *s;
                }
                Ok(Some(cfg))
            }
            TraceSource::Generator { config } => Ok(Some(config.clone())),
            TraceSource::GeneratorFile { path } => read_json(&base.join(path)).map(Some),
        }
    }

    /// Loads or generates the trace. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<TraceSet, ConfigError> {
        match self {
            TraceSource::Files { vms, usage } => Ok(load_traces(&base.join(vms), &base.join(usage))?),
            other => {
                let cfg = other.generator_config(base)?.expect("generated source");
                Ok(generate_synthetic(&cfg)?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    pub ma_window: usize,
    pub sl_margin: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            ma_window: DEFAULT_MA_WINDOW,
            sl_margin: DEFAULT_SL_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trace: TraceSource,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub baselines: BaselineParams,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_alpha() -> f64 {
    0.95
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_episodes() -> usize {
    600
}

fn default_eval_episodes() -> usize {
    100
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_owned(),
        source,
    })
}

impl RunConfig {
    pub fn with_trace(trace: TraceSource) -> Self {
        RunConfig {
            trace,
            env: EnvConfig::default(),
            learner: LearnerConfig::default(),
            baselines: BaselineParams::default(),
            alpha: default_alpha(),
            seeds: default_seeds(),
            episodes: default_episodes(),
            eval_episodes: default_eval_episodes(),
            out_dir: default_out_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.eval_episodes == 0 {
            return Err(ConfigError::Invalid("eval_episodes must be at least 1".into()));
        }
        if self.baselines.ma_window == 0 || !(self.baselines.sl_margin > 0.0) {
            return Err(ConfigError::Invalid("baseline parameters must be positive".into()));
        }
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.learner
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
