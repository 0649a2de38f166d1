//! Run configuration: a TOML document with every section optional and
//! unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{EnvConfig, EnvParams};
use crate::marl::TrainConfig;
use crate::network::{build_topology, TopologyConfig, TopologyError};
use crate::task::{QosWeights, TaskConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub grid_points: usize,
    pub scenarios: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { grid_points: 11, scenarios: 8 }
    }
}

/// Default output paths, used when the command line names none.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub topology: TopologyConfig,
    pub task: TaskConfig,
    pub env: EnvParams,
    pub qos: QosWeights,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            topology: TopologyConfig::default(),
            task: TaskConfig::default(),
            env: EnvParams::default(),
            qos: QosWeights::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: String,
    pub constraint: String,
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: must be {}", self.field, self.constraint)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error{}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), key.as_ref().map(|k| format!(" (key `{k}`)")).unwrap_or_default())]
    Parse { line: Option<usize>, key: Option<String>, message: String },
    #[error("{} invalid field(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<FieldViolation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[FieldViolation] {
        match self {
            ConfigError::Validation(v) => v,
            _ => &[],
        }
    }
}

fn violation(field: &str, constraint: &str) -> FieldViolation {
    FieldViolation { field: field.to_string(), constraint: constraint.to_string() }
}

impl RunConfig {
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { topology: self.topology.clone(), task: self.task.clone(), env: self.env.clone(), qos: self.qos }
    }

    /// Every violated constraint, across all sections.
    pub fn violations(&self) -> Vec<FieldViolation> {
        let mut out: Vec<FieldViolation> =
            self.env_config().violations().into_iter().map(|(f, c)| violation(f, c)).collect();
        match build_topology(&self.topology) {
            Ok(_) => {}
            Err(TopologyError::InvalidConfig { field, reason }) => out.push(violation(field, reason)),
            Err(e @ TopologyError::NoRoute { .. }) => out.push(violation("topology", &e.to_string())),
            Err(e) => out.extend(e.violations().iter().map(|v| violation("topology", &v.to_string()))),
        }
        out.extend(self.train.violations().into_iter().map(|(f, c)| violation(f, c)));
        if self.eval.episodes == 0 {
            out.push(violation("eval.episodes", ">= 1"));
        }
        if self.oracle.grid_points < 2 {
            out.push(violation("oracle.grid_points", ">= 2"));
        }
        if self.oracle.scenarios == 0 {
            out.push(violation("oracle.scenarios", ">= 1"));
        }
        out
    }

    pub fn validate(self) -> Result<Self, ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Validation(v))
        }
    }

    /// Parses without validating.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = offending_key(&message);
            let line = e.span().map(|span| {
                let start = span.start.min(text.len());
                let base = text[..start].matches('\n').count() + 1;
                // point at the offending key when it appears after the span start
                key.as_ref()
                    .and_then(|k| {
                        text[start..].lines().position(|l| {
                            l.trim_start().strip_prefix(k.as_str()).is_some_and(|rest| rest.trim_start().starts_with('='))
                        })
                    })
                    .map_or(base, |offset| base + offset)
            });
            ConfigError::Parse { line, key, message }
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text)?.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical JSON rendering, as lowercase hex. Any field
    /// change alters the hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The first backquoted name in a deserializer message, such as the field
/// in "unknown field `epislon`, expected one of ...".
fn offending_key(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}
