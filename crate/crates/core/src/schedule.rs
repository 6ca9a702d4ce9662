//! Noise schedules and DDIM step ladders.

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

/// Cumulative signal levels `alpha_bar[t]` for `t = 0..=T`, with
/// `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Wraps an explicit `alpha_bar` table. The table must start at exactly 1
    /// and decrease strictly while staying positive.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidScheduleParams(
                "alpha_bar needs at least two entries".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::InvalidScheduleParams(
                "alpha_bar[0] must be 1".into(),
            ));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if w[1].is_nan() || w[1] >= w[0] || w[1] <= 0.0 {
                return Err(Error::InvalidScheduleParams(format!(
                    "alpha_bar must decrease strictly within (0, 1]; violated at t={}",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Number of training timesteps `T`.
    pub fn train_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// `alpha_bar[t]`. Panics when `t > T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        build_linear_schedule(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

/// Linear beta schedule over `t = 1..=T`; `alpha_bar[t] = Π_{u≤t} (1 − beta_u)`.
pub fn build_linear_schedule(
    train_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if train_steps < 1 {
        return Err(Error::InvalidScheduleParams("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidScheduleParams(format!(
            "need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(train_steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for t in 1..=train_steps {
        let beta = if train_steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (train_steps - 1) as f64
        };
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    NoiseSchedule::from_alpha_bar(alpha_bar)
}

/// Descending DDIM timestep subsequence `T = t_0 > t_1 > … > t_S = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepLadder {
    timesteps: Vec<usize>,
}

impl StepLadder {
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Number of sampler steps `S`.
    pub fn steps(&self) -> usize {
        self.timesteps.len() - 1
    }

    /// `(t, t_prev)` for step `k`.
    pub fn pair(&self, k: usize) -> (usize, usize) {
        (self.timesteps[k], self.timesteps[k + 1])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps.windows(2).map(|w| (w[0], w[1]))
    }
}

/// `timestep_k = round(T·(S − k)/S)` for `k = 0..=S`, ties rounding up.
pub fn ddim_ladder(train_steps: usize, steps: usize) -> Result<StepLadder> {
    if steps < 1 || steps > train_steps {
        return Err(Error::InvalidScheduleParams(format!(
            "need 1 <= S <= T, got S={steps}, T={train_steps}"
        )));
    }
    let (t, s) = (train_steps as u128, steps as u128);
    let timesteps = (0..=s)
        .map(|k| ((2 * t * (s - k) + s) / (2 * s)) as usize)
        .collect();
    Ok(StepLadder { timesteps })
}
