//! `key = value` run configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unlisted keys keep their defaults; unknown keys are an error.
//!
//! Network shape keys take comma-separated lists: `conv_layers = 16x8/2, 16x4/2`
//! (channels x width / stride), `scalar_layers = 32`, `head_layers = 64`. The
//! final 7-way linear layer is always appended to the head.

use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::agent::{AgentConfig, AgentError};
use crate::env::{EnvConfig, EnvError};
use crate::nn::{ConvSpec, DenseSpec, NetworkSpec, N_ACTIONS, N_SCALARS};

pub const DEFAULT_TOTAL_STEPS: u64 = 75_000;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {key}: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("{key}{}: {reason}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid { key: String, line: Option<usize>, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub network: NetworkSpec,
    pub total_env_steps: u64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            network: NetworkSpec::default_for(env.n_bins),
            env,
            agent: AgentConfig::default(),
            total_env_steps: DEFAULT_TOTAL_STEPS,
            seed: DEFAULT_SEED,
            out_dir: None,
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::Value { line, key: key.to_string(), reason: format!("'{raw}': {e}") })
}

fn list<T>(line: usize, key: &str, raw: &str, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            item(s).ok_or_else(|| ConfigError::Value { line, key: key.to_string(), reason: format!("cannot parse '{s}'") })
        })
        .collect()
}

fn conv_item(s: &str) -> Option<ConvSpec> {
    let (ch, rest) = s.split_once('x')?;
    let (w, st) = rest.split_once('/')?;
    Some(ConvSpec {
        out_channels: ch.trim().parse().ok()?,
        width: w.trim().parse().ok()?,
        stride: st.trim().parse().ok()?,
        relu: true,
    })
}

fn dense_item(s: &str) -> Option<DenseSpec> {
    Some(DenseSpec { out_units: s.parse().ok()?, relu: true })
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<String, usize> = HashMap::new();
    let defaults = NetworkSpec::default();
    let mut conv = defaults.spectrum_path.clone();
    let mut scalar = defaults.scalar_path.clone();
    let mut head_hidden: Vec<DenseSpec> = defaults.head[..defaults.head.len() - 1].to_vec();

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, raw) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, reason: format!("expected 'key = value', got '{content}'") })?;
        let key = key.trim();
        let raw = raw.trim();
        if lines.insert(key.to_string(), line).is_some() {
            return Err(ConfigError::Value { line, key: key.into(), reason: "set more than once".into() });
        }
        let e = &mut cfg.env;
        let a = &mut cfg.agent;
        match key {
            "fc_min" => e.fc_min = value(line, key, raw)?,
            "fc_max" => e.fc_max = value(line, key, raw)?,
            "bw_max" => e.bw_max = value(line, key, raw)?,
            "bw_min" => e.bw_min = value(line, key, raw)?,
            "n_bins" => e.n_bins = value(line, key, raw)?,
            "snr_db" => e.snr_db = value(line, key, raw)?,
            "n_signals" => e.n_signals = value(line, key, raw)?,
            "max_steps" => e.max_steps = value(line, key, raw)?,
            "scheme" => e.scheme = value(line, key, raw)?,
            "step_penalty" => e.step_penalty = value(line, key, raw)?,
            "signals" => e.fixed_signals = Some(list(line, key, raw, |s| s.parse::<f64>().ok())?),
            "gamma" => a.gamma = value(line, key, raw)?,
            "epsilon" => a.epsilon = value(line, key, raw)?,
            "batch_size" => a.batch_size = value(line, key, raw)?,
            "mode" => a.mode = value(line, key, raw)?,
            "target_sync_period" => a.target_sync_period = value(line, key, raw)?,
            "warmup" => a.warmup = value(line, key, raw)?,
            "train_every" => a.train_every = value(line, key, raw)?,
            "lr" => a.lr = value(line, key, raw)?,
            "replay_capacity" => a.replay_capacity = value(line, key, raw)?,
            "conv_layers" => conv = list(line, key, raw, conv_item)?,
            "scalar_layers" => scalar = list(line, key, raw, dense_item)?,
            "head_layers" => head_hidden = list(line, key, raw, dense_item)?,
            "total_env_steps" => cfg.total_env_steps = value(line, key, raw)?,
            "seed" => cfg.seed = value(line, key, raw)?,
            "out_dir" => cfg.out_dir = Some(PathBuf::from(raw)),
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
    }

    let mut head = head_hidden;
    head.push(DenseSpec { out_units: N_ACTIONS, relu: false });
    cfg.network = NetworkSpec { spectrum_path: conv, scalar_path: scalar, head, n_bins: cfg.env.n_bins, n_scalars: N_SCALARS };

    let invalid = |key: &str, reason: String| ConfigError::Invalid {
        key: key.to_string(),
        line: lines.get(key).copied(),
        reason,
    };
    if let Err(EnvError::Config { field, reason }) = cfg.env.validate() {
        return Err(invalid(field, reason));
    }
    if let Err(AgentError::Config { field, reason }) = cfg.agent.validate() {
        return Err(invalid(field, reason));
    }
    if let Err(err) = cfg.network.layout() {
        let key = ["conv_layers", "scalar_layers", "head_layers", "n_bins"]
            .into_iter()
            .find(|k| lines.contains_key(*k))
            .unwrap_or("conv_layers");
        return Err(invalid(key, err.to_string()));
    }
    Ok(cfg)
}
