use thiserror::Error;

/// Errors raised by the sampler, its geometry and the analysis tooling.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("matrix size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: String, actual: String },
    #[error("invalid schedule parameters: {0}")]
    InvalidScheduleParams(String),
    #[error("invalid brick configuration: {0}")]
    InvalidBrickConfig(String),
    #[error("latent of {len} frames is shorter than the window of {window} frames")]
    LatentTooShort { len: usize, window: usize },
    #[error("sequence length mismatch: expected {expected} frames, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid Gaussian-process parameters: {0}")]
    InvalidGpParams(String),
    #[error("invalid timestep {0}: alpha_bar must be below 1")]
    InvalidTimestep(usize),
    #[error("segment of {len} frames exceeds the denoiser window of {window} frames")]
    SegmentTooLong { len: usize, window: usize },
    #[error("frame sequence shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid timestep pair t={t}, t_prev={t_prev}")]
    InvalidTimestepPair { t: usize, t_prev: usize },
    #[error("segment {start}..{end} falls outside a window of {window} frames")]
    WindowExceeded {
        start: usize,
        end: usize,
        window: usize,
    },
    #[error("invalid overlap {overlap} for window {window}: need 1 <= overlap < window")]
    InvalidOverlap { overlap: usize, window: usize },
    #[error("denoiser failed the linearity probe (residual {residual:e})")]
    NonlinearDenoiser { residual: f64 },
    #[error(
        "exact covariance propagation needs deterministic sampling (eta = 0), got eta = {eta}"
    )]
    StochasticSampler { eta: f64 },
    #[error("invalid strategy configuration: {0}")]
    InvalidStrategy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
