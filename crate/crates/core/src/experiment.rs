//! Experiment drivers behind the CLI subcommands and their CSV/JSON output.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{estimate_covariance_mc, metrics, propagate_covariance, MetricsReport};
use crate::brick::{build_plan, BrickConfig};
use crate::config::{ConfigError, ExperimentConfig};
use crate::denoiser::gp_covariance;
use crate::error::Error;
use crate::sampler::{Executor, StepLayout, StrategyKind};

/// Stride grid of the default sweep.
pub const DEFAULT_SWEEP_STRIDES: [usize; 6] = [0, 1, 3, 5, 7, 9];

/// CSV header, in column order.
pub const CSV_HEADER: &str = "strategy,f,stride,overlap,eta,T,S,rho,d,F,seed,mc_samples,\
cov_error_total,cov_error_boundary,marginal_var_error,mean_boundary_jump,dynamic_degree,wall_ms";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Capability(String),
    #[error("{0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for configuration errors, 3 for unsupported requests, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Capability(_) => 3,
            RunError::Internal(_) | RunError::Io(_) => 1,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::StochasticSampler { .. } | Error::NonlinearDenoiser { .. } => {
                RunError::Capability(format!(
                    "{e}; use the `sample` subcommand for Monte Carlo estimates"
                ))
            }
            other => RunError::Internal(other.to_string()),
        }
    }
}

/// One output record: configuration echo, metrics and wall-clock time.
///
/// `stride` is 0 for every strategy but brick and `overlap` is 0 for every
/// strategy but sliding window. `mc_samples` is 0 for rows computed by exact
/// propagation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub strategy: String,
    pub f: usize,
    pub stride: usize,
    pub overlap: usize,
    pub eta: f64,
    #[serde(rename = "T")]
    pub train_steps: usize,
    #[serde(rename = "S")]
    pub steps: usize,
    pub rho: f64,
    pub d: usize,
    #[serde(rename = "F")]
    pub frames: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub cov_error_total: f64,
    pub cov_error_boundary: f64,
    pub marginal_var_error: f64,
    pub mean_boundary_jump: f64,
    pub dynamic_degree: f64,
    pub wall_ms: f64,
}

impl ResultRow {
    fn new(
        config: &ExperimentConfig,
        mc_samples: usize,
        report: &MetricsReport,
        wall_ms: f64,
    ) -> Self {
        let strategy = config.strategy_config();
        Self {
            strategy: config.strategy.name().to_string(),
            f: config.window,
            stride: strategy.effective_stride(),
            overlap: if config.strategy == StrategyKind::SlidingWindow {
                strategy.overlap
            } else {
                0
            },
            eta: config.eta,
            train_steps: config.train_steps,
            steps: config.steps,
            rho: config.rho,
            d: config.channels,
            frames: config.frames,
            seed: config.seed,
            mc_samples,
            cov_error_total: report.cov_error_total,
            cov_error_boundary: report.cov_error_boundary,
            marginal_var_error: report.marginal_var_error,
            mean_boundary_jump: report.mean_boundary_jump,
            dynamic_degree: report.dynamic_degree,
            wall_ms: (wall_ms * 1000.0).round() / 1000.0,
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Exact covariance propagation plus metrics. Requires `eta = 0`.
pub fn run_covariance(config: &ExperimentConfig) -> Result<ResultRow, RunError> {
    config.validate()?;
    let start = Instant::now();
    let schedule = Arc::new(config.schedule());
    let ladder = config.ladder();
    let oracle = config.oracle(Arc::clone(&schedule));
    let cov = propagate_covariance(
        &config.strategy_config(),
        &schedule,
        &ladder,
        &oracle,
        config.frames,
    )?;
    let target = gp_covariance(config.frames, config.rho)?;
    let report = metrics(&cov, &target, config.window)?;
    Ok(ResultRow::new(config, 0, &report, elapsed_ms(start)))
}

/// Monte Carlo covariance over `mc_samples` runs on `workers` threads plus
/// metrics. Output does not depend on the worker count.
pub fn run_sample(config: &ExperimentConfig) -> Result<ResultRow, RunError> {
    config.validate()?;
    let start = Instant::now();
    let schedule = Arc::new(config.schedule());
    let ladder = config.ladder();
    let oracle = config.oracle(Arc::clone(&schedule));
    let executor = Executor::with_workers(config.workers)?;
    let cov = estimate_covariance_mc(
        &config.strategy_config(),
        &schedule,
        &ladder,
        &oracle,
        config.frames,
        config.channels,
        config.mc_samples,
        config.seed,
        &executor,
    )?;
    let target = gp_covariance(config.frames, config.rho)?;
    let report = metrics(&cov, &target, config.window)?;
    Ok(ResultRow::new(
        config,
        config.mc_samples,
        &report,
        elapsed_ms(start),
    ))
}

/// Exact when deterministic, Monte Carlo otherwise.
pub fn run_auto(config: &ExperimentConfig) -> Result<ResultRow, RunError> {
    if config.eta == 0.0 {
        run_covariance(config)
    } else {
        run_sample(config)
    }
}

/// One brick row per stride, in the given order.
pub fn run_sweep(config: &ExperimentConfig, strides: &[usize]) -> Result<Vec<ResultRow>, RunError> {
    let base = config.with_strategy(StrategyKind::Brick);
    strides
        .iter()
        .map(|&s| {
            let cfg = base.with_stride(s);
            cfg.validate()?;
            run_auto(&cfg)
        })
        .collect()
}

/// One row per strategy: untiled, concat, sliding window, brick.
pub fn run_compare(config: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    StrategyKind::ALL
        .iter()
        .map(|&kind| {
            let cfg = config.with_strategy(kind);
            cfg.validate()?;
            run_auto(&cfg)
        })
        .collect()
}

fn format_ranges<'a>(ranges: impl Iterator<Item = &'a std::ops::Range<usize>>) -> String {
    ranges
        .map(|r| format!("[{},{})", r.start, r.end))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Offsets and segments of every sampler step, one tab-separated row per step.
pub fn plan_table(config: &ExperimentConfig) -> Result<String, RunError> {
    config.validate()?;
    let ladder = config.ladder();
    let strategy = config.strategy_config();
    let len = config.padded_length();
    let mut out = String::new();
    writeln!(
        out,
        "# strategy={} f={} stride={} L={} (F={} padded by {} on each side)",
        config.strategy,
        config.window,
        strategy.effective_stride(),
        len,
        config.frames,
        config.window
    )
    .expect("writing to a String");
    out.push_str("k\tt\tt_prev\toffset\tsegments\n");
    for (k, (t, t_prev)) in ladder.pairs().enumerate() {
        let (offset, segments) = match config.strategy {
            StrategyKind::Concat | StrategyKind::Brick => {
                let plan = build_plan(
                    &BrickConfig::new(config.window, strategy.effective_stride(), len)?,
                    k,
                );
                (plan.offset.to_string(), format_ranges(plan.segments.iter()))
            }
            _ => {
                let layout = StepLayout::for_strategy(&strategy, len, k)?;
                (
                    "-".to_string(),
                    format_ranges(layout.windows.iter().map(|w| &w.input)),
                )
            }
        };
        writeln!(out, "{k}\t{t}\t{t_prev}\t{offset}\t{segments}").expect("writing to a String");
    }
    Ok(out)
}

/// Writes rows as CSV with [`CSV_HEADER`], or as one JSON object per line.
pub fn write_rows<W: Write>(rows: &[ResultRow], out: W, json: bool) -> Result<(), RunError> {
    if json {
        let mut out = out;
        for row in rows {
            let line = serde_json::to_string(row).map_err(|e| RunError::Internal(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        return Ok(());
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| RunError::Internal(e.to_string()))?;
    }
    if rows.is_empty() {
        writer
            .write_record(CSV_HEADER.split(','))
            .map_err(|e| RunError::Internal(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            frames: 16,
            window: 8,
            stride: 1,
            steps: 10,
            channels: 2,
            mc_samples: 40,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn csv_header_matches_row_fields() {
        let row = run_covariance(&small()).unwrap();
        let mut buf = Vec::new();
        write_rows(&[row], &mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));

        let mut empty = Vec::new();
        write_rows(&[], &mut empty, false).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn json_rows() {
        let row = run_covariance(&small()).unwrap();
        let mut buf = Vec::new();
        write_rows(&[row.clone(), row], &mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["strategy"], "brick");
        assert_eq!(v["F"], 16);
    }

    #[test]
    fn stochastic_covariance_is_a_capability_error() {
        let cfg = ExperimentConfig {
            eta: 0.5,
            ..small()
        };
        let err = run_covariance(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("sample"));
    }

    #[test]
    fn sweep_rejects_stride_beyond_window() {
        let err = run_sweep(&small(), &[0, 8]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn plan_table_rows() {
        let cfg = ExperimentConfig {
            stride: 3,
            ..ExperimentConfig::default()
        };
        let table = plan_table(&cfg).unwrap();
        let rows: Vec<&str> = table.lines().skip(2).collect();
        assert_eq!(rows.len(), 50);
        assert!(rows[0].starts_with("0\t1000\t980\t0\t[0,16) [16,32)"));
        assert_eq!(rows[10].split('\t').nth(3), Some("14"));

        let sliding = plan_table(&cfg.with_strategy(StrategyKind::SlidingWindow)).unwrap();
        assert!(sliding.lines().nth(2).unwrap().contains("[8,24)"));
    }

    #[test]
    fn compare_emits_four_strategies() {
        let rows = run_compare(&small()).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
        assert_eq!(names, ["untiled", "concat", "sliding_window", "brick"]);
        assert!(rows.iter().all(|r| r.mc_samples == 0));
    }
}
