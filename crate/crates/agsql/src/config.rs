//! Layered configuration for the CLI and service.
//!
//! Effective values are resolved as defaults ← config file ← environment ←
//! flags (rightmost wins). The file is TOML with the following schema, all
//! keys optional:
//!
//! ```toml
//! jobs = 1
//!
//! [csmr]
//! alpha = 0.8
//!
//! [atr]
//! preset = "eq2"        # or "figure"
//! c_turn = 0.0001       # any AtrConfig field overrides the preset
//!
//! [grpo]
//! eps_clip = 0.2
//! std_guard = 1e-8
//! group_size = 8
//!
//! [exec]
//! timeout_ms = 30000
//! max_rows_returned = 10000
//! obs_max_rows = 50
//! obs_max_chars = 2000
//!
//! [env]
//! max_tool_calls = 3
//!
//! [policy]
//! url = "http://127.0.0.1:9000/generate"
//! timeout_ms = 60000
//!
//! [service]
//! bind = "127.0.0.1:8714"
//! max_concurrency = 8
//! request_timeout_ms = 60000
//!
//! [paths]
//! db_root = "dbs"
//! tasks = "tasks.json"
//! ```
//!
//! Recognized environment variables: `AGSQL_CONFIG` (config file path),
//! `AGSQL_ALPHA`, `AGSQL_PRESET`, `AGSQL_DB_ROOT`, `AGSQL_TASKS`,
//! `AGSQL_POLICY_URL`, `AGSQL_POLICY_TIMEOUT_MS`, `AGSQL_BIND`,
//! `AGSQL_JOBS`, `AGSQL_MAX_TOOL_CALLS`.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::atr::{AtrConfig, AtrPreset};
use crate::csmr::{CsmrConfig, CsmrError};
use crate::grpo::GrpoConfig;
use crate::service::ServiceConfig;
use crate::sql_exec::ExecConfig;

pub const CONFIG_ENV: &str = "AGSQL_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config file: {0}")]
    Parse(String),
    #[error("invalid {key}: {message}")]
    BadValue { key: String, message: String },
    #[error(transparent)]
    Csmr(#[from] CsmrError),
    #[error(transparent)]
    Atr(#[from] crate::atr::AtrError),
}

/// Fully resolved configuration: the exact input to every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct CliConfig {
    pub alpha: f64,
    pub atr_preset: AtrPreset,
    /// `(field, value)` overrides applied on top of the preset, in order.
    pub atr_overrides: Vec<(String, String)>,
    pub eps_clip: f64,
    pub std_guard: f64,
    pub group_size: usize,
    pub exec: ExecConfig,
    pub max_tool_calls: usize,
    pub db_root: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub policy_url: Option<String>,
    pub policy_timeout_ms: u64,
    pub bind: String,
    pub max_concurrency: usize,
    pub request_timeout_ms: u64,
    pub jobs: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        let service = ServiceConfig::default();
        CliConfig {
            alpha: CsmrConfig::default().alpha,
            atr_preset: AtrPreset::Eq2,
            atr_overrides: Vec::new(),
            eps_clip: GrpoConfig::default().eps_clip,
            std_guard: GrpoConfig::default().std_guard,
            group_size: GrpoConfig::default().group_size,
            exec: ExecConfig::default(),
            max_tool_calls: 3,
            db_root: None,
            tasks: None,
            policy_url: None,
            policy_timeout_ms: 60_000,
            bind: service.bind,
            max_concurrency: service.max_concurrency,
            request_timeout_ms: service.request_timeout_ms,
            jobs: 1,
        }
    }
}

impl CliConfig {
    pub fn csmr(&self) -> Result<CsmrConfig, ConfigError> {
        Ok(CsmrConfig::new(self.alpha)?)
    }

    pub fn atr(&self) -> Result<AtrConfig, ConfigError> {
        let mut cfg = self.atr_preset.config();
        for (key, value) in &self.atr_overrides {
            cfg.set_field(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            eps_clip: self.eps_clip,
            std_guard: self.std_guard,
            group_size: self.group_size,
        }
    }

    pub fn agent_env(&self) -> crate::agent_env::EnvConfig {
        crate::agent_env::EnvConfig {
            max_tool_calls: self.max_tool_calls,
            exec: self.exec,
            prompts: Default::default(),
        }
    }

    pub fn service(&self) -> ServiceConfig {
        ServiceConfig {
            bind: self.bind.clone(),
            db_root: self.db_root.clone().unwrap_or_else(|| PathBuf::from(".")),
            exec: self.exec,
            max_concurrency: self.max_concurrency,
            request_timeout_ms: self.request_timeout_ms,
        }
    }

    /// Apply one override layer.
    pub fn apply(&mut self, layer: &PartialConfig) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &layer.$field {
                    self.$field = v.clone();
                }
            };
        }
        take!(alpha);
        take!(atr_preset);
        self.atr_overrides
            .extend(layer.atr_overrides.iter().cloned());
        take!(eps_clip);
        take!(std_guard);
        take!(group_size);
        if let Some(v) = layer.timeout_ms {
            self.exec.timeout_ms = v;
        }
        if let Some(v) = layer.max_rows_returned {
            self.exec.max_rows_returned = v;
        }
        if let Some(v) = layer.obs_max_rows {
            self.exec.obs_max_rows = v;
        }
        if let Some(v) = layer.obs_max_chars {
            self.exec.obs_max_chars = v;
        }
        take!(max_tool_calls);
        if layer.db_root.is_some() {
            self.db_root = layer.db_root.clone();
        }
        if layer.tasks.is_some() {
            self.tasks = layer.tasks.clone();
        }
        if layer.policy_url.is_some() {
            self.policy_url = layer.policy_url.clone();
        }
        take!(policy_timeout_ms);
        take!(bind);
        take!(max_concurrency);
        take!(request_timeout_ms);
        take!(jobs);
    }

    /// Resolve defaults ← file ← env ← flags.
    pub fn resolve(
        file_text: Option<&str>,
        env_vars: &HashMap<String, String>,
        flags: &PartialConfig,
    ) -> Result<CliConfig, ConfigError> {
        let mut cfg = CliConfig::default();
        if let Some(text) = file_text {
            cfg.apply(&PartialConfig::from_toml(text)?);
        }
        cfg.apply(&PartialConfig::from_env(env_vars)?);
        cfg.apply(flags);
        Ok(cfg)
    }
}

/// One override layer; `None` means "leave the lower layer's value".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub alpha: Option<f64>,
    pub atr_preset: Option<AtrPreset>,
    pub atr_overrides: Vec<(String, String)>,
    pub eps_clip: Option<f64>,
    pub std_guard: Option<f64>,
    pub group_size: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub max_rows_returned: Option<usize>,
    pub obs_max_rows: Option<usize>,
    pub obs_max_chars: Option<usize>,
    pub max_tool_calls: Option<usize>,
    pub db_root: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub policy_url: Option<String>,
    pub policy_timeout_ms: Option<u64>,
    pub bind: Option<String>,
    pub max_concurrency: Option<usize>,
    pub request_timeout_ms: Option<u64>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct FileSchema {
    jobs: Option<usize>,
    csmr: Option<CsmrSection>,
    atr: Option<toml::map::Map<String, toml::Value>>,
    grpo: Option<GrpoSection>,
    exec: Option<ExecSection>,
    env: Option<EnvSection>,
    policy: Option<PolicySection>,
    service: Option<ServiceSection>,
    paths: Option<PathsSection>,
}

#[derive(Debug, Deserialize)]
struct CsmrSection {
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct GrpoSection {
    eps_clip: Option<f64>,
    std_guard: Option<f64>,
    group_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ExecSection {
    timeout_ms: Option<u64>,
    max_rows_returned: Option<usize>,
    obs_max_rows: Option<usize>,
    obs_max_chars: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct EnvSection {
    max_tool_calls: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct PolicySection {
    url: Option<String>,
    timeout_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ServiceSection {
    bind: Option<String>,
    max_concurrency: Option<usize>,
    request_timeout_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct PathsSection {
    db_root: Option<PathBuf>,
    tasks: Option<PathBuf>,
}

impl PartialConfig {
    pub fn from_toml(text: &str) -> Result<PartialConfig, ConfigError> {
        let schema: FileSchema =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut out = PartialConfig {
            jobs: schema.jobs,
            ..Default::default()
        };
        if let Some(csmr) = schema.csmr {
            out.alpha = csmr.alpha;
        }
        if let Some(atr) = schema.atr {
            for (key, value) in atr {
                if key == "preset" {
                    let preset = value.as_str().ok_or_else(|| ConfigError::BadValue {
                        key: "atr.preset".to_string(),
                        message: "must be a string".to_string(),
                    })?;
                    out.atr_preset =
                        Some(preset.parse::<AtrPreset>().map_err(|e| {
                            ConfigError::BadValue {
                                key: "atr.preset".to_string(),
                                message: e.to_string(),
                            }
                        })?);
                } else {
                    let text = match value {
                        toml::Value::String(s) => s,
                        other => other.to_string(),
                    };
                    out.atr_overrides.push((key, text));
                }
            }
        }
        if let Some(grpo) = schema.grpo {
            out.eps_clip = grpo.eps_clip;
            out.std_guard = grpo.std_guard;
            out.group_size = grpo.group_size;
        }
        if let Some(exec) = schema.exec {
            out.timeout_ms = exec.timeout_ms;
            out.max_rows_returned = exec.max_rows_returned;
            out.obs_max_rows = exec.obs_max_rows;
            out.obs_max_chars = exec.obs_max_chars;
        }
        if let Some(env) = schema.env {
            out.max_tool_calls = env.max_tool_calls;
        }
        if let Some(policy) = schema.policy {
            out.policy_url = policy.url;
            out.policy_timeout_ms = policy.timeout_ms;
        }
        if let Some(service) = schema.service {
            out.bind = service.bind;
            out.max_concurrency = service.max_concurrency;
            out.request_timeout_ms = service.request_timeout_ms;
        }
        if let Some(paths) = schema.paths {
            out.db_root = paths.db_root;
            out.tasks = paths.tasks;
        }
        Ok(out)
    }

    pub fn from_env(vars: &HashMap<String, String>) -> Result<PartialConfig, ConfigError> {
        let mut out = PartialConfig::default();
        fn parsed<T: std::str::FromStr>(
            vars: &HashMap<String, String>,
            key: &str,
        ) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            match vars.get(key) {
                None => Ok(None),
                Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                    ConfigError::BadValue {
                        key: key.to_string(),
                        message: e.to_string(),
                    }
                }),
            }
        }
        out.alpha = parsed(vars, "AGSQL_ALPHA")?;
        out.atr_preset = parsed(vars, "AGSQL_PRESET")?;
        out.db_root = vars.get("AGSQL_DB_ROOT").map(PathBuf::from);
        out.tasks = vars.get("AGSQL_TASKS").map(PathBuf::from);
        out.policy_url = vars.get("AGSQL_POLICY_URL").cloned();
        out.policy_timeout_ms = parsed(vars, "AGSQL_POLICY_TIMEOUT_MS")?;
        out.bind = vars.get("AGSQL_BIND").cloned();
        out.jobs = parsed(vars, "AGSQL_JOBS")?;
        out.max_tool_calls = parsed(vars, "AGSQL_MAX_TOOL_CALLS")?;
        Ok(out)
    }
}
