//! Flat `key = value` configuration. Later sources override earlier ones:
//! defaults, then a file, then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::engine::{EngineConfig, RuntimeEndpoint};
use crate::exec::DEFAULT_BATCH_SIZE;
use crate::monitor::MonitorConfig;
use crate::nn::{DEFAULT_HIDDEN, DEFAULT_LR};
use crate::storage::DEFAULT_POOL_PAGES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub runtime: RuntimeEndpoint,
    pub runtime_fallback: bool,
    pub seed: u64,
    pub batch_size: usize,
    pub window_size: u32,
    pub tau: f64,
    pub alpha: f64,
    pub monitor_capacity: usize,
    pub buffer_pool_pages: usize,
    pub model_buffer: usize,
    pub hidden: Vec<usize>,
    pub lr: f32,
    pub epochs: usize,
    /// Fine-tune as soon as drift is detected instead of on next use.
    pub eager_finetune: bool,
    pub timeout_secs: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: None,
            runtime: RuntimeEndpoint::InProcess,
            runtime_fallback: false,
            seed: 42,
            batch_size: DEFAULT_BATCH_SIZE,
            window_size: crate::engine::DEFAULT_WINDOW,
            tau: 1.5,
            alpha: 0.05,
            monitor_capacity: 80,
            buffer_pool_pages: DEFAULT_POOL_PAGES,
            model_buffer: 8,
            hidden: DEFAULT_HIDDEN.to_vec(),
            lr: DEFAULT_LR,
            epochs: 1,
            eager_finetune: false,
            timeout_secs: 30,
        }
    }
}

pub const KEYS: &[&str] = &[
    "data_dir",
    "runtime",
    "runtime_fallback",
    "seed",
    "batch_size",
    "window_size",
    "tau",
    "alpha",
    "monitor_capacity",
    "buffer_pool_pages",
    "model_buffer",
    "hidden",
    "lr",
    "epochs",
    "eager_finetune",
    "timeout_secs",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e.to_string()))
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: reason.into() }
}

fn ranged<T: FromStr + PartialOrd + fmt::Display>(key: &str, value: &str, lo: T, hi: T) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    let v: T = parse(key, value)?;
    if v < lo || v > hi {
        return Err(invalid(key, value, format!("must be in [{lo}, {hi}]")));
    }
    Ok(v)
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "data_dir" => self.data_dir = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "runtime" => self.runtime = value.parse().map_err(|e| invalid(key, value, format!("{e}")))?,
            "runtime_fallback" => self.runtime_fallback = boolean(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "batch_size" => self.batch_size = ranged(key, value, 1, 1 << 20)?,
            "window_size" => self.window_size = ranged(key, value, 1, 1 << 16)?,
            "tau" => {
                self.tau = parse(key, value)?;
                if !(self.tau.is_finite() && self.tau > 1.0) {
                    return Err(invalid(key, value, "must be finite and > 1"));
                }
            }
            "alpha" => {
                self.alpha = parse(key, value)?;
                if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                    return Err(invalid(key, value, "must be in (0, 1]"));
                }
            }
            "monitor_capacity" => self.monitor_capacity = ranged(key, value, 1, 1 << 20)?,
            "buffer_pool_pages" => self.buffer_pool_pages = ranged(key, value, 1, 1 << 24)?,
            "model_buffer" => self.model_buffer = ranged(key, value, 1, 1 << 16)?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|h| ranged(key, h.trim(), 1, 1 << 16)).collect::<Result<_, _>>()?
                }
            }
            "lr" => {
                self.lr = parse(key, value)?;
                if !(self.lr.is_finite() && self.lr > 0.0 && self.lr <= 10.0) {
                    return Err(invalid(key, value, "must be in (0, 10]"));
                }
            }
            "epochs" => self.epochs = ranged(key, value, 1, 10_000)?,
            "eager_finetune" => self.eager_finetune = boolean(key, value)?,
            "timeout_secs" => self.timeout_secs = ranged(key, value, 1, 86_400)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                ConfigError::UnknownKey(_) | ConfigError::InvalidValue { .. } => {
                    ConfigError::Syntax { line: i + 1, message: e.to_string() }
                }
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_str(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn monitor(&self) -> MonitorConfig {
        MonitorConfig { tau: self.tau, alpha: self.alpha, capacity: self.monitor_capacity }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            endpoint: self.runtime.clone(),
            fallback_inprocess: self.runtime_fallback,
            window: self.window_size,
            timeout: Duration::from_secs(self.timeout_secs),
            ..Default::default()
        }
    }

    /// Renders the effective configuration in the file format.
    pub fn to_text(&self) -> String {
        let runtime = match &self.runtime {
            RuntimeEndpoint::InProcess => "inprocess".to_string(),
            RuntimeEndpoint::Tcp(a) => format!("tcp:{a}"),
        };
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let dir = self.data_dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default();
        format!(
            "data_dir = {dir}\nruntime = {runtime}\nruntime_fallback = {}\nseed = {}\nbatch_size = {}\nwindow_size = {}\n\
             tau = {}\nalpha = {}\nmonitor_capacity = {}\nbuffer_pool_pages = {}\nmodel_buffer = {}\nhidden = {}\n\
             lr = {}\nepochs = {}\neager_finetune = {}\ntimeout_secs = {}\n",
            self.runtime_fallback,
            self.seed,
            self.batch_size,
            self.window_size,
            self.tau,
            self.alpha,
            self.monitor_capacity,
            self.buffer_pool_pages,
            self.model_buffer,
            hidden.join(","),
            self.lr,
            self.epochs,
            self.eager_finetune,
            self.timeout_secs
        )
    }
}
