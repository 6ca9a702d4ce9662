//! Exact covariance propagation, Monte Carlo estimation and consistency
//! metrics.
//!
//! With `eta = 0` and a linear denoiser every sampler step is a linear map
//! `z ↦ A_k·z` acting identically on each channel. Composing the step
//! matrices gives the whole chain `M`, and starting from `z_T ~ N(0, I)` the
//! output covariance is `M·Mᵀ`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::brick::padded_length;
use crate::denoiser::{Condition, Denoiser};
use crate::error::{Error, Result};
use crate::latent::FrameSequence;
use crate::numerics::{derive_seed, Matrix, SeededRng};
use crate::sampler::{ddim_step, Executor, Sampler, StepLayout, StrategyConfig};
use crate::schedule::{NoiseSchedule, StepLadder};

/// Relative residual above which a denoiser counts as nonlinear.
pub const LINEARITY_TOLERANCE: f64 = 1e-10;

/// Runs per Monte Carlo batch. Fixed so the summation order, and hence the
/// result, does not depend on the worker count.
const MC_BATCH: usize = 32;

/// Single-channel deterministic DDIM step of one window.
fn window_map(
    v: &[f64],
    denoiser: &dyn Denoiser,
    condition: &Condition,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let z = FrameSequence::from_frames(v)?;
    let eps = denoiser.predict(&z, t, condition)?;
    // eta = 0 draws nothing from the stream
    let out = ddim_step(&z, &eps, t, t_prev, schedule, 0.0, &mut SeededRng::new(0))?;
    Ok(out.into_values())
}

/// `n × n` matrix of one deterministic window step, probed column by column
/// and checked against random inputs.
pub fn window_operator(
    n: usize,
    denoiser: &dyn Denoiser,
    condition: &Condition,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    let mut op = Matrix::zeros(n, n);
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = window_map(&basis, denoiser, condition, t, t_prev, schedule)?;
        basis[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            op[(i, j)] = v;
        }
    }

    let mut rng = SeededRng::new(0x5EED ^ n as u64);
    let mut residual: f64 = 0.0;
    let origin = window_map(&vec![0.0; n], denoiser, condition, t, t_prev, schedule)?;
    residual = residual.max(origin.iter().fold(0.0, |m, x| m.max(x.abs())));
    for _ in 0..2 {
        let probe = rng.sample_standard_normal(n);
        let direct = window_map(&probe, denoiser, condition, t, t_prev, schedule)?;
        let via_matrix = op.mul_vec(&probe);
        let err: f64 = direct
            .iter()
            .zip(&via_matrix)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = probe.iter().map(|x| x * x).sum::<f64>().sqrt();
        residual = residual.max(err / scale);
    }
    if residual.is_nan() || residual > LINEARITY_TOLERANCE {
        return Err(Error::NonlinearDenoiser { residual });
    }
    Ok(op)
}

/// Matrix `A` with `A·z` equal to one deterministic step under `layout`.
pub fn step_operator(
    layout: &StepLayout,
    denoiser: &dyn Denoiser,
    condition: &Condition,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    let len = layout.len;
    let mut ops: HashMap<usize, Matrix> = HashMap::new();
    let mut a = Matrix::zeros(len, len);
    for w in &layout.windows {
        let n = w.input.len();
        if n > denoiser.window() {
            return Err(Error::WindowExceeded {
                start: w.input.start,
                end: w.input.end,
                window: denoiser.window(),
            });
        }
        if let Entry::Vacant(slot) = ops.entry(n) {
            slot.insert(window_operator(
                n, denoiser, condition, t, t_prev, schedule,
            )?);
        }
        let op = &ops[&n];
        for r in w.keep.clone() {
            for c in w.input.clone() {
                a[(r, c)] += op[(r - w.input.start, c - w.input.start)];
            }
        }
    }
    if layout.averaged {
        for (r, &count) in layout.coverage().iter().enumerate() {
            let inv = 1.0 / count as f64;
            for c in 0..len {
                a[(r, c)] *= inv;
            }
        }
    }
    Ok(a)
}

/// The per-step operators `A_0, …, A_{S−1}` on a latent of `len` frames.
pub fn step_operators(
    strategy: &StrategyConfig,
    schedule: &NoiseSchedule,
    ladder: &StepLadder,
    denoiser: &dyn Denoiser,
    len: usize,
) -> Result<Vec<Matrix>> {
    if strategy.eta != 0.0 {
        return Err(Error::StochasticSampler { eta: strategy.eta });
    }
    let condition = Condition::default();
    ladder
        .pairs()
        .enumerate()
        .map(|(k, (t, t_prev))| {
            let layout = StepLayout::for_strategy(strategy, len, k)?;
            step_operator(&layout, denoiser, &condition, t, t_prev, schedule)
        })
        .collect()
}

/// `M = A_{S−1}···A_0` over a latent of `len` frames.
pub fn chain_operator(
    strategy: &StrategyConfig,
    schedule: &NoiseSchedule,
    ladder: &StepLadder,
    denoiser: &dyn Denoiser,
    len: usize,
) -> Result<Matrix> {
    let ops = step_operators(strategy, schedule, ladder, denoiser, len)?;
    Ok(ops.iter().fold(Matrix::identity(len), |m, a| a.matmul(&m)))
}

/// Exact per-channel output covariance of the middle `frames` frames.
pub fn propagate_covariance(
    strategy: &StrategyConfig,
    schedule: &NoiseSchedule,
    ladder: &StepLadder,
    denoiser: &dyn Denoiser,
    frames: usize,
) -> Result<Matrix> {
    let (padded, window) = (strategy.padded_length(frames), strategy.window);
    let full = chain_operator(strategy, schedule, ladder, denoiser, padded)?.gram();
    Ok(full.block(window..window + frames, window..window + frames))
}

/// Sums `Σ_runs Σ_channels z·zᵀ` over `samples` runs in fixed-size batches.
fn second_moment<F>(
    len: usize,
    samples: usize,
    executor: &Executor,
    run: F,
) -> Result<(Matrix, usize)>
where
    F: Fn(usize) -> Result<FrameSequence> + Sync + Send,
{
    let batches: Vec<usize> = (0..samples.div_ceil(MC_BATCH)).collect();
    let partials = executor.map_indexed(&batches, |b| {
        let mut acc = vec![0.0; len * len];
        let mut replicas = 0;
        for i in b * MC_BATCH..((b + 1) * MC_BATCH).min(samples) {
            let z = run(i)?;
            for c in 0..z.channels() {
                let col = z.channel(c);
                for (r, &zr) in col.iter().enumerate() {
                    for (s, &zs) in col.iter().enumerate().skip(r) {
                        acc[r * len + s] += zr * zs;
                    }
                }
                replicas += 1;
            }
        }
        Ok((acc, replicas))
    })?;
    let mut total = vec![0.0; len * len];
    let mut replicas = 0;
    for (acc, n) in partials {
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a;
        }
        replicas += n;
    }
    let m = Matrix::from_fn(len, len, |r, s| {
        let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
        total[lo * len + hi] / replicas as f64
    });
    Ok((m, replicas))
}

/// Seed of Monte Carlo run `index`.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Empirical second-moment matrix of the sampler output over `samples`
/// independent runs, channels pooled as replicas.
#[allow(clippy::too_many_arguments)]
pub fn estimate_covariance_mc(
    strategy: &StrategyConfig,
    schedule: &NoiseSchedule,
    ladder: &StepLadder,
    denoiser: &dyn Denoiser,
    frames: usize,
    channels: usize,
    samples: usize,
    seed: u64,
    executor: &Executor,
) -> Result<Matrix> {
    if samples < 2 {
        return Err(Error::InvalidStrategy(
            "Monte Carlo needs at least 2 samples".into(),
        ));
    }
    let sampler = Sampler::new(*strategy, schedule, ladder, denoiser)?;
    let (m, _) = second_moment(frames, samples, executor, |i| {
        sampler.sample(frames, channels, run_seed(seed, i))
    })?;
    Ok(m)
}

/// Empirical second moments of the full padded latent after the first
/// `steps` sampler steps.
#[allow(clippy::too_many_arguments)]
pub fn estimate_covariance_mc_at_step(
    strategy: &StrategyConfig,
    schedule: &NoiseSchedule,
    ladder: &StepLadder,
    denoiser: &dyn Denoiser,
    frames: usize,
    channels: usize,
    steps: usize,
    samples: usize,
    seed: u64,
    executor: &Executor,
) -> Result<Matrix> {
    if samples < 2 {
        return Err(Error::InvalidStrategy(
            "Monte Carlo needs at least 2 samples".into(),
        ));
    }
    let sampler = Sampler::new(*strategy, schedule, ladder, denoiser)?;
    let len = strategy.padded_length(frames);
    let (m, _) = second_moment(len, samples, executor, |i| {
        let s = run_seed(seed, i);
        sampler.run_steps(
            sampler.initial_noise(frames, channels, s),
            steps,
            &SeededRng::new(s),
        )
    })?;
    Ok(m)
}

/// Crops an `L×L` covariance of a padded latent to its middle `frames` block.
pub fn crop_covariance(cov: &Matrix, frames: usize, window: usize) -> Result<Matrix> {
    let expected = padded_length(frames, window);
    if cov.rows() != expected || !cov.is_square() {
        return Err(Error::LengthMismatch {
            expected,
            actual: cov.rows(),
        });
    }
    Ok(cov.block(window..window + frames, window..window + frames))
}

/// Stride-0 block boundaries inside `[0, frames)`: `f, 2f, …`.
pub fn block_boundaries(frames: usize, window: usize) -> Vec<usize> {
    (1..)
        .map(|i| i * window)
        .take_while(|&b| b < frames)
        .collect()
}

/// Block of frame `i` in the stride-0 partition.
pub fn block_of(i: usize, window: usize) -> usize {
    i / window
}

/// Entries `(i, j)`, `i < j`, straddling a block boundary with `j − i < window`.
pub fn boundary_band(frames: usize, window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..frames {
        for j in i + 1..frames.min(i + window) {
            if block_of(i, window) != block_of(j, window) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Consistency and fidelity of an output covariance against the target.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `‖Cov − Σ‖_F`.
    pub cov_error_total: f64,
    /// Frobenius error over entries straddling a block boundary with `|i − j| < f`.
    pub cov_error_boundary: f64,
    /// `max_i |Cov_ii − Σ_ii|`.
    pub marginal_var_error: f64,
    /// Boundaries `b` in frame coordinates.
    pub boundaries: Vec<usize>,
    /// `E[(z_b − z_{b−1})²]` per boundary.
    pub boundary_jump: Vec<f64>,
    /// Same quantity under the target covariance.
    pub target_boundary_jump: Vec<f64>,
    /// Mean of `boundary_jump`; 0 when there are no interior boundaries.
    pub mean_boundary_jump: f64,
    /// Mean over `i` of `E[(z_{i+1} − z_i)²]`.
    pub dynamic_degree: f64,
}

fn adjacent_jump(cov: &Matrix, b: usize) -> f64 {
    cov[(b, b)] + cov[(b - 1, b - 1)] - 2.0 * cov[(b - 1, b)]
}

pub fn metrics(cov: &Matrix, target: &Matrix, window: usize) -> Result<MetricsReport> {
    if cov.rows() != target.rows() || cov.cols() != target.cols() || !cov.is_square() {
        return Err(Error::SizeMismatch {
            expected: format!("square {}x{}", target.rows(), target.cols()),
            actual: format!("{}x{}", cov.rows(), cov.cols()),
        });
    }
    if window < 1 {
        return Err(Error::InvalidBrickConfig(
            "window must be at least 1".into(),
        ));
    }
    let n = cov.rows();
    let diff = cov.sub(target);
    let band: f64 = boundary_band(n, window)
        .into_iter()
        .map(|(i, j)| diff[(i, j)].powi(2) + diff[(j, i)].powi(2))
        .sum();
    let marginal_var_error = (0..n).fold(0.0_f64, |m, i| m.max(diff[(i, i)].abs()));
    let boundaries = block_boundaries(n, window);
    let boundary_jump: Vec<f64> = boundaries.iter().map(|&b| adjacent_jump(cov, b)).collect();
    let target_boundary_jump = boundaries
        .iter()
        .map(|&b| adjacent_jump(target, b))
        .collect();
    let mean_boundary_jump = if boundary_jump.is_empty() {
        0.0
    } else {
        boundary_jump.iter().sum::<f64>() / boundary_jump.len() as f64
    };
    let dynamic_degree = if n < 2 {
        0.0
    } else {
        (1..n).map(|i| adjacent_jump(cov, i)).sum::<f64>() / (n - 1) as f64
    };
    Ok(MetricsReport {
        cov_error_total: diff.frobenius_norm(),
        cov_error_boundary: band.sqrt(),
        marginal_var_error,
        boundaries,
        boundary_jump,
        target_boundary_jump,
        mean_boundary_jump,
        dynamic_degree,
    })
}

/// Frames of the padded latent covered by exactly one window vs. more than
/// one, under a sliding layout.
pub fn overlap_split(layout: &StepLayout) -> (Vec<usize>, Vec<usize>) {
    let cov = layout.coverage();
    let single = (0..layout.len).filter(|&i| cov[i] == 1).collect();
    let multi = (0..layout.len).filter(|&i| cov[i] > 1).collect();
    (single, multi)
}

/// Mean of the diagonal over `frames`.
pub fn mean_diagonal(cov: &Matrix, frames: &[usize]) -> f64 {
    frames.iter().map(|&i| cov[(i, i)]).sum::<f64>() / frames.len() as f64
}
