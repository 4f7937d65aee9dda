//! Pipeline configuration: one human-editable TOML file, flag-overridable.
//!
//! Every key has a default; a missing config file means "all defaults plus
//! a scripted backend must be registered by the caller". The documented
//! schema lives in the README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use ltc_core::sampling::Cutoff;

use crate::gateway::{Gateway, HttpBackend, ScriptedBackend};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("config key {key:?}: {message}")]
    Value { key: String, message: String },
    #[error("backend {id:?}: {message}")]
    Backend { id: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    pub min_modified_lines: u64,
    pub token_limit: u64,
    pub token_divisor: u32,
    pub version_manifest_globs: Vec<String>,
    pub version_bump_max_lines: u64,
    pub k_target: u32,
    pub rationale_sample_size: usize,
    pub learn_quota: u64,
    pub test_quota: u64,
    /// Fraction in (0,1) or a unix timestamp.
    pub cutoff: f64,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        let pf = ltc_core::mining::PrefilterConfig::default();
        MinerConfig {
            min_modified_lines: pf.min_modified_lines,
            token_limit: pf.token_limit,
            token_divisor: 4,
            version_manifest_globs: pf.version_manifest_globs,
            version_bump_max_lines: pf.version_bump_max_lines,
            k_target: 7,
            rationale_sample_size: 60,
            learn_quota: 24,
            test_quota: 7,
            cutoff: 0.8,
            seed: 42,
        }
    }
}

impl MinerConfig {
    pub fn prefilter(&self) -> ltc_core::mining::PrefilterConfig {
        ltc_core::mining::PrefilterConfig {
            min_modified_lines: self.min_modified_lines,
            token_limit: self.token_limit,
            version_manifest_globs: self.version_manifest_globs.clone(),
            version_bump_max_lines: self.version_bump_max_lines,
        }
    }

    pub fn cutoff(&self) -> Result<Cutoff, ConfigError> {
        if self.cutoff > 0.0 && self.cutoff < 1.0 {
            Ok(Cutoff::Fraction(self.cutoff))
        } else if self.cutoff >= 1.0 && self.cutoff.fract() == 0.0 {
            Ok(Cutoff::Timestamp(self.cutoff as i64))
        } else {
            Err(ConfigError::Value {
                key: "miner.cutoff".into(),
                message: "must be a fraction in (0,1) or a unix timestamp".into(),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub max_attempt_steps: u32,
    pub reflection_retry: u32,
    pub prompt_budget_chars: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            max_attempt_steps: 80,
            reflection_retry: 1,
            prompt_budget_chars: 24_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_steps: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_steps: 80 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Run each judge cell in both presentation orders (position-bias
    /// control); disable to halve judge cost.
    pub both_orders: bool,
    pub judges: Vec<String>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            both_orders: true,
            judges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub cache_dir: String,
    pub default_backend: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            cache_dir: ".ltc-cache".into(),
            default_backend: "main".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// "scripted" or "http".
    pub kind: String,
    /// Scripted: path to the script file (relative to the config file).
    pub script: Option<String>,
    /// Http: endpoint and model.
    pub url: Option<String>,
    pub model: Option<String>,
    /// Env var holding the credential (`LTC_BACKEND_<ID>_KEY` wins).
    pub key_env: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub miner: MinerConfig,
    pub learning: LearningConfig,
    pub solver: SolverConfig,
    pub evaluate: EvaluateConfig,
    pub gateway: GatewayConfig,
    pub backends: BTreeMap<String, BackendConfig>,
    /// Directory the config file was loaded from; resolves relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(config)
    }

    /// Applies one `key=value` override (the flag-overridable key set).
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Value {
            key: key.to_string(),
            message,
        };
        macro_rules! parse {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(e.to_string()))?
            };
        }
        match key {
            "min_modified_lines" => self.miner.min_modified_lines = parse!(u64),
            "token_limit" => self.miner.token_limit = parse!(u64),
            "token_divisor" => self.miner.token_divisor = parse!(u32),
            "version_manifest_globs" => {
                self.miner.version_manifest_globs =
                    value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "version_bump_max_lines" => self.miner.version_bump_max_lines = parse!(u64),
            "k_target" => self.miner.k_target = parse!(u32),
            "rationale_sample_size" => self.miner.rationale_sample_size = parse!(usize),
            "learn_quota" => self.miner.learn_quota = parse!(u64),
            "test_quota" => self.miner.test_quota = parse!(u64),
            "cutoff" => self.miner.cutoff = parse!(f64),
            "seed" => self.miner.seed = parse!(u64),
            "max_attempt_steps" => self.learning.max_attempt_steps = parse!(u32),
            "reflection_retry" => self.learning.reflection_retry = parse!(u32),
            "prompt_budget_chars" => self.learning.prompt_budget_chars = parse!(usize),
            "max_steps" => self.solver.max_steps = parse!(u32),
            "both_orders" => self.evaluate.both_orders = parse!(bool),
            "cache_dir" => self.gateway.cache_dir = value.to_string(),
            "default_backend" => self.gateway.default_backend = value.to_string(),
            _ => return Err(bad("unknown override key".into())),
        }
        Ok(())
    }

    fn resolve(&self, raw: &str) -> PathBuf {
        let p = Path::new(raw);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.gateway.cache_dir)
    }

    /// Builds the gateway with every configured backend registered.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let gateway = Gateway::new(Some(self.cache_dir()));
        for (id, backend) in &self.backends {
            match backend.kind.as_str() {
                "scripted" => {
                    let script = backend.script.as_ref().ok_or_else(|| ConfigError::Backend {
                        id: id.clone(),
                        message: "scripted backend needs a script path".into(),
                    })?;
                    let loaded = ScriptedBackend::from_file(&self.resolve(script)).map_err(|e| {
                        ConfigError::Backend {
                            id: id.clone(),
                            message: e.to_string(),
                        }
                    })?;
                    gateway.register_backend(id.clone(), Arc::new(loaded));
                }
                "http" => {
                    let model = backend.model.clone().unwrap_or_else(|| id.clone());
                    let http = HttpBackend::from_config(
                        id,
                        backend.url.clone(),
                        model,
                        backend.key_env.as_deref(),
                    )
                    .map_err(|message| ConfigError::Backend {
                        id: id.clone(),
                        message,
                    })?;
                    gateway.register_backend(id.clone(), Arc::new(http));
                }
                other => {
                    return Err(ConfigError::Backend {
                        id: id.clone(),
                        message: format!("unknown backend kind {other:?}"),
                    })
                }
            }
        }
        Ok(gateway)
    }

    /// Config snapshot for run manifests.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
