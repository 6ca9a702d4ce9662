//! Brick-to-wall tiled denoising for long-sequence diffusion sampling.
//!
//! A short-window denoiser is applied to a long latent segment by segment.
//! After each sampler step the segment boundaries shift by a fixed stride, so
//! information flows across boundaries over the course of sampling. The crate
//! also provides the concatenation and sliding-window-averaging baselines, an
//! analytic Gaussian-process noise predictor standing in for a trained model,
//! and exact covariance propagation that measures cross-segment consistency
//! without sampling.

pub mod analysis;
pub mod brick;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod latent;
pub mod numerics;
pub mod sampler;
pub mod schedule;

pub use brick::{
    build_plan, crop_middle, extension_rule, offset_for_step, padded_length, BrickConfig,
    ExtensionRule, SegmentPlan,
};
pub use denoiser::{
    analytic_predict_noise, gp_covariance, zero_denoiser, Condition, Denoiser, GpOracle,
    GpOracleParams, ZeroDenoiser,
};
pub use error::{Error, Result};
pub use latent::FrameSequence;
pub use numerics::{cholesky_factor, solve_spd, Matrix, SeededRng};
pub use sampler::{
    brick_step, ddim_step, sample, sliding_window_step, Executor, Sampler, StrategyConfig,
    StrategyKind,
};
pub use schedule::{build_linear_schedule, ddim_ladder, NoiseSchedule, StepLadder};
