//! Noise predictors.
//!
//! [`GpOracle`] is the exact MMSE noise predictor for latents whose frames
//! follow a zero-mean stationary AR(1) process (`Cov(z_i, z_j) = ρ^|i−j|`,
//! channels independent). It stands in for a pretrained short-sequence model:
//! it only ever sees at most `window` frames, and because AR(1) covariances
//! are nested, its prediction on `n` frames is exactly the `n`-frame marginal
//! one.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::latent::FrameSequence;
use crate::numerics::{solve_spd, Matrix};
use crate::schedule::NoiseSchedule;

/// Opaque conditioning token. Carried through every call, ignored by the
/// analytic predictors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Condition(pub String);

impl Condition {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }
}

/// Maps a noisy segment at timestep `t` to its predicted noise.
pub trait Denoiser: Send + Sync {
    /// Longest segment accepted.
    fn window(&self) -> usize;

    /// Predicted noise, same shape as `segment`.
    fn predict(
        &self,
        segment: &FrameSequence,
        t: usize,
        condition: &Condition,
    ) -> Result<FrameSequence>;

    fn check_window(&self, segment: &FrameSequence) -> Result<()> {
        if segment.len() > self.window() {
            return Err(Error::SegmentTooLong {
                len: segment.len(),
                window: self.window(),
            });
        }
        Ok(())
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDenoiser {
    window: usize,
}

pub fn zero_denoiser(window: usize) -> ZeroDenoiser {
    assert!(window >= 1, "window must be at least 1");
    ZeroDenoiser { window }
}

impl Denoiser for ZeroDenoiser {
    fn window(&self) -> usize {
        self.window
    }

    fn predict(
        &self,
        segment: &FrameSequence,
        _t: usize,
        _condition: &Condition,
    ) -> Result<FrameSequence> {
        self.check_window(segment)?;
        Ok(FrameSequence::zeros(segment.len(), segment.channels()))
    }
}

/// Parameters of the AR(1) data distribution and the oracle's window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOracleParams {
    pub rho: f64,
    pub window: usize,
    pub channels: usize,
}

impl GpOracleParams {
    pub fn new(rho: f64, window: usize, channels: usize) -> Result<Self> {
        let params = Self {
            rho,
            window,
            channels,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidGpParams(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if self.window < 1 || self.channels < 1 {
            return Err(Error::InvalidGpParams(
                "window and channels must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// AR(1) frame covariance `Σ_ij = ρ^|i−j|`.
pub fn gp_covariance(n: usize, rho: f64) -> Result<Matrix> {
    if n < 1 {
        return Err(Error::InvalidGpParams("n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidGpParams(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

/// `n × n` matrix `P` with `ε̂ = P·z` per channel at signal level `a`.
///
/// Posterior mean of the clean frames `m = √a·Σ·(a·Σ + (1 − a)·I)⁻¹·z`,
/// then `ε̂ = (z − √a·m)/√(1 − a)`.
fn noise_operator(n: usize, rho: f64, a: f64) -> Result<Matrix> {
    let sigma = gp_covariance(n, rho)?;
    let k = Matrix::from_fn(n, n, |i, j| {
        a * sigma[(i, j)] + if i == j { 1.0 - a } else { 0.0 }
    });
    let k_inv = solve_spd(&k, &Matrix::identity(n))?;
    let mean_op = sigma.matmul(&k_inv).scaled(a.sqrt());
    let scale = 1.0 / (1.0 - a).sqrt();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        (id - a.sqrt() * mean_op[(i, j)]) * scale
    }))
}

/// Applies a per-frame linear map independently to every channel.
pub(crate) fn apply_per_channel(op: &Matrix, z: &FrameSequence) -> FrameSequence {
    let (n, d) = (z.len(), z.channels());
    debug_assert_eq!(op.cols(), n);
    let mut out = FrameSequence::zeros(op.rows(), d);
    let src = z.values();
    let dst = out.values_mut();
    for i in 0..op.rows() {
        let row = op.row(i);
        let out_frame = &mut dst[i * d..(i + 1) * d];
        for (j, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &v) in out_frame.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                *o += w * v;
            }
        }
    }
    out
}

fn signal_level(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    if t == 0 || t > schedule.train_steps() {
        return Err(Error::InvalidTimestep(t));
    }
    let a = schedule.alpha_bar(t);
    if a >= 1.0 {
        return Err(Error::InvalidTimestep(t));
    }
    Ok(a)
}

/// One-shot MMSE noise prediction without operator caching.
pub fn analytic_predict_noise(
    z: &FrameSequence,
    t: usize,
    schedule: &NoiseSchedule,
    params: &GpOracleParams,
) -> Result<FrameSequence> {
    params.validate()?;
    if z.len() > params.window {
        return Err(Error::SegmentTooLong {
            len: z.len(),
            window: params.window,
        });
    }
    let a = signal_level(schedule, t)?;
    Ok(apply_per_channel(
        &noise_operator(z.len(), params.rho, a)?,
        z,
    ))
}

/// The analytic AR(1) noise predictor, with operators cached per
/// `(segment length, timestep)`.
#[derive(Debug)]
pub struct GpOracle {
    params: GpOracleParams,
    schedule: Arc<NoiseSchedule>,
    cache: RwLock<HashMap<(usize, usize), Arc<Matrix>>>,
}

impl GpOracle {
    pub fn new(params: GpOracleParams, schedule: Arc<NoiseSchedule>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            schedule,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &GpOracleParams {
        &self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Cached `ε̂ = P·z` operator for `n` frames at timestep `t`.
    pub fn operator(&self, n: usize, t: usize) -> Result<Arc<Matrix>> {
        if n > self.params.window {
            return Err(Error::SegmentTooLong {
                len: n,
                window: self.params.window,
            });
        }
        if let Some(op) = self
            .cache
            .read()
            .expect("operator cache poisoned")
            .get(&(n, t))
        {
            return Ok(Arc::clone(op));
        }
        let a = signal_level(&self.schedule, t)?;
        let op = Arc::new(noise_operator(n, self.params.rho, a)?);
        // a racing thread may have inserted the same operator; either copy is identical
        let mut cache = self.cache.write().expect("operator cache poisoned");
        Ok(Arc::clone(cache.entry((n, t)).or_insert(op)))
    }

    /// Pre-computes operators so a parallel region never builds them.
    pub fn warm(&self, lengths: &[usize], timesteps: &[usize]) -> Result<()> {
        for &n in lengths {
            for &t in timesteps {
                self.operator(n, t)?;
            }
        }
        Ok(())
    }
}

impl Denoiser for GpOracle {
    fn window(&self) -> usize {
        self.params.window
    }

    fn predict(
        &self,
        segment: &FrameSequence,
        t: usize,
        _condition: &Condition,
    ) -> Result<FrameSequence> {
        self.check_window(segment)?;
        let op = self.operator(segment.len(), t)?;
        Ok(apply_per_channel(&op, segment))
    }
}
