//! Experiment configuration: flat `key = value` lines, `#` comments.
//!
//! ```text
//! # three windows of 16 frames, shifted by one frame per step
//! strategy = brick
//! f = 16
//! stride = 1
//! F = 48
//! ```

use std::collections::HashSet;
use std::sync::Arc;

use thiserror::Error;

use crate::denoiser::{GpOracle, GpOracleParams};
use crate::sampler::{StrategyConfig, StrategyKind};
use crate::schedule::{build_linear_schedule, ddim_ladder, NoiseSchedule, StepLadder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

/// Recognised keys, in documentation order.
pub const KEYS: [&str; 15] = [
    "strategy",
    "f",
    "stride",
    "overlap",
    "eta",
    "T",
    "beta_start",
    "beta_end",
    "S",
    "rho",
    "d",
    "F",
    "seed",
    "mc_samples",
    "workers",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    /// Window `f` in frames.
    pub window: usize,
    pub stride: usize,
    /// `None` means `f / 2`.
    pub overlap: Option<usize>,
    pub eta: f64,
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// DDIM step count `S`.
    pub steps: usize,
    pub rho: f64,
    /// Channels per frame `d`.
    pub channels: usize,
    /// Output frames `F`.
    pub frames: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Brick,
            window: 16,
            stride: 1,
            overlap: None,
            eta: 0.0,
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            steps: 50,
            rho: 0.9,
            channels: 4,
            frames: 48,
            seed: 0,
            mc_samples: 5000,
            workers: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Parse {
        line,
        message: format!("bad value {value:?} for {key}: {e}"),
    })
}

/// Parses and validates a configuration; omitted keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown key {key:?}"),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key {key:?}"),
            });
        }
        match key {
            "strategy" => {
                cfg.strategy = value.parse().map_err(|e| ConfigError::Parse {
                    line,
                    message: format!("{e}"),
                })?
            }
            "f" => cfg.window = parse_value(key, value, line)?,
            "stride" => cfg.stride = parse_value(key, value, line)?,
            "overlap" => cfg.overlap = Some(parse_value(key, value, line)?),
            "eta" => cfg.eta = parse_value(key, value, line)?,
            "T" => cfg.train_steps = parse_value(key, value, line)?,
            "beta_start" => cfg.beta_start = parse_value(key, value, line)?,
            "beta_end" => cfg.beta_end = parse_value(key, value, line)?,
            "S" => cfg.steps = parse_value(key, value, line)?,
            "rho" => cfg.rho = parse_value(key, value, line)?,
            "d" => cfg.channels = parse_value(key, value, line)?,
            "F" => cfg.frames = parse_value(key, value, line)?,
            "seed" => cfg.seed = parse_value(key, value, line)?,
            "mc_samples" => cfg.mc_samples = parse_value(key, value, line)?,
            "workers" => cfg.workers = parse_value(key, value, line)?,
            _ => unreachable!("key list checked above"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn overlap(&self) -> usize {
        self.overlap.unwrap_or(self.window / 2)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Validation(msg));
        if self.window < 1 {
            return fail("f must be at least 1".into());
        }
        if self.stride >= self.window {
            return fail(format!(
                "stride < f required, got stride={} f={}",
                self.stride, self.window
            ));
        }
        if (self.strategy == StrategyKind::SlidingWindow || self.overlap.is_some())
            && (self.overlap() < 1 || self.overlap() >= self.window)
        {
            return fail(format!(
                "1 <= overlap < f required, got overlap={} f={}",
                self.overlap(),
                self.window
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return fail(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if let Err(e) = build_linear_schedule(self.train_steps, self.beta_start, self.beta_end) {
            return fail(e.to_string());
        }
        if self.steps < 1 || self.steps > self.train_steps {
            return fail(format!(
                "1 <= S <= T required, got S={} T={}",
                self.steps, self.train_steps
            ));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("0 <= rho < 1 required, got {}", self.rho));
        }
        if self.channels < 1 {
            return fail("d must be at least 1".into());
        }
        if self.frames < 1 {
            return fail("F must be at least 1".into());
        }
        if self.mc_samples < 2 {
            return fail("mc_samples must be at least 2".into());
        }
        if self.workers < 1 {
            return fail("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Same experiment under another strategy.
    pub fn with_strategy(&self, strategy: StrategyKind) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }

    pub fn with_stride(&self, stride: usize) -> Self {
        Self {
            stride,
            ..self.clone()
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        match self.strategy {
            StrategyKind::Untiled => StrategyConfig::untiled(self.window, self.eta),
            StrategyKind::Concat => StrategyConfig::concat(self.window, self.eta),
            StrategyKind::Brick => StrategyConfig::brick(self.window, self.stride, self.eta),
            StrategyKind::SlidingWindow => {
                StrategyConfig::sliding_window(self.window, self.overlap(), self.eta)
            }
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        build_linear_schedule(self.train_steps, self.beta_start, self.beta_end)
            .expect("validated configuration")
    }

    pub fn ladder(&self) -> StepLadder {
        ddim_ladder(self.train_steps, self.steps).expect("validated configuration")
    }

    pub fn padded_length(&self) -> usize {
        self.strategy_config().padded_length(self.frames)
    }

    /// GP oracle sized for this strategy: window `f` for tiled strategies,
    /// the whole padded latent for untiled runs.
    pub fn oracle(&self, schedule: Arc<NoiseSchedule>) -> GpOracle {
        let window = match self.strategy {
            StrategyKind::Untiled => self.padded_length(),
            _ => self.window,
        };
        let params =
            GpOracleParams::new(self.rho, window, self.channels).expect("validated configuration");
        GpOracle::new(params, schedule).expect("validated configuration")
    }
}
