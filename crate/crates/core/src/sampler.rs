//! DDIM stepping and the tiled denoising loop.
//!
//! Every strategy reduces a sampler step to a [`StepLayout`]: a list of
//! windows, each denoised independently as one DDIM step, plus a rule for
//! merging them back. Brick and concat layouts write back disjoint keep
//! ranges; sliding-window layouts average overlapping windows frame by frame.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::brick::{
    build_plan, crop_middle, extension_rule, padded_length, BrickConfig, SegmentPlan,
};
use crate::denoiser::{Condition, Denoiser};
use crate::error::{Error, Result};
use crate::latent::FrameSequence;
use crate::numerics::SeededRng;
use crate::schedule::{NoiseSchedule, StepLadder};

/// Child-stream key for the initial noise; step streams use `[step, window]`.
const INITIAL_NOISE_KEY: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// The whole latent in one window.
    Untiled,
    /// Fixed partition into windows of `f` frames.
    Concat,
    /// Partition shifted by `stride` frames every step.
    Brick,
    /// Overlapping windows merged by averaging.
    SlidingWindow,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Untiled,
        StrategyKind::Concat,
        StrategyKind::SlidingWindow,
        StrategyKind::Brick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Untiled => "untiled",
            StrategyKind::Concat => "concat",
            StrategyKind::Brick => "brick",
            StrategyKind::SlidingWindow => "sliding_window",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "untiled" => Ok(StrategyKind::Untiled),
            "concat" | "concatenate" => Ok(StrategyKind::Concat),
            "brick" => Ok(StrategyKind::Brick),
            "sliding_window" | "slidingwindow" => Ok(StrategyKind::SlidingWindow),
            other => Err(Error::InvalidStrategy(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

/// Tiling strategy and DDIM stochasticity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Window length `f`. Untiled runs use it for padding only.
    pub window: usize,
    /// Brick only.
    pub stride: usize,
    /// Sliding window only.
    pub overlap: usize,
    pub eta: f64,
}

impl StrategyConfig {
    /// `window` only sets the padding, so untiled runs target the same frames
    /// as tiled ones.
    pub fn untiled(window: usize, eta: f64) -> Self {
        Self {
            kind: StrategyKind::Untiled,
            window,
            stride: 0,
            overlap: 0,
            eta,
        }
    }

    pub fn concat(window: usize, eta: f64) -> Self {
        Self {
            kind: StrategyKind::Concat,
            window,
            stride: 0,
            overlap: 0,
            eta,
        }
    }

    pub fn brick(window: usize, stride: usize, eta: f64) -> Self {
        Self {
            kind: StrategyKind::Brick,
            window,
            stride,
            overlap: 0,
            eta,
        }
    }

    pub fn sliding_window(window: usize, overlap: usize, eta: f64) -> Self {
        Self {
            kind: StrategyKind::SlidingWindow,
            window,
            stride: 0,
            overlap,
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidStrategy(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if self.window < 1 {
            return Err(Error::InvalidStrategy("window must be at least 1".into()));
        }
        match self.kind {
            StrategyKind::Brick if self.stride >= self.window => {
                Err(Error::InvalidBrickConfig(format!(
                    "stride {} must be below the window {}",
                    self.stride, self.window
                )))
            }
            StrategyKind::SlidingWindow if self.overlap < 1 || self.overlap >= self.window => {
                Err(Error::InvalidOverlap {
                    overlap: self.overlap,
                    window: self.window,
                })
            }
            _ => Ok(()),
        }
    }

    /// Stride actually applied: concat is brick with stride 0.
    pub fn effective_stride(&self) -> usize {
        match self.kind {
            StrategyKind::Brick => self.stride,
            _ => 0,
        }
    }

    /// Padded latent length the sampler works on for `frames` output frames.
    /// Untiled pads by `window` too so every strategy targets the same frames.
    pub fn padded_length(&self, frames: usize) -> usize {
        padded_length(frames, self.window)
    }
}

/// One DDIM step from `t` to `t_prev`.
///
/// `x̂₀ = (z − √(1−ā_t)·ε̂)/√ā_t`, then
/// `z_prev = √ā_prev·x̂₀ + √(1−ā_prev−σ²)·ε̂ + σ·ξ` with
/// `σ = η·√((1−ā_prev)/(1−ā_t))·√(1−ā_t/ā_prev)`. With `eta = 0` no randomness
/// is consumed.
pub fn ddim_step(
    z: &FrameSequence,
    eps_hat: &FrameSequence,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    rng: &mut SeededRng,
) -> Result<FrameSequence> {
    if !z.same_shape(eps_hat) {
        return Err(Error::ShapeMismatch(format!(
            "latent {}x{} vs noise {}x{}",
            z.len(),
            z.channels(),
            eps_hat.len(),
            eps_hat.channels()
        )));
    }
    if t <= t_prev || t > schedule.train_steps() {
        return Err(Error::InvalidTimestepPair { t, t_prev });
    }
    let a_t = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t_prev);
    let sigma = if eta > 0.0 {
        eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
    } else {
        0.0
    };
    let x0_scale = 1.0 / a_t.sqrt();
    let noise_in = (1.0 - a_t).sqrt();
    let sqrt_prev = a_prev.sqrt();
    let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();

    let mut out = FrameSequence::zeros(z.len(), z.channels());
    for ((o, &zv), &e) in out
        .values_mut()
        .iter_mut()
        .zip(z.values())
        .zip(eps_hat.values())
    {
        let x0 = (zv - noise_in * e) * x0_scale;
        *o = sqrt_prev * x0 + dir * e;
    }
    if sigma > 0.0 {
        for o in out.values_mut() {
            *o += sigma * rng.standard_normal();
        }
    }
    Ok(out)
}

/// A window fed to the denoiser and the frames of its result written back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepWindow {
    pub input: Range<usize>,
    pub keep: Range<usize>,
}

/// How one sampler step splits the latent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepLayout {
    pub len: usize,
    pub windows: Vec<StepWindow>,
    /// Overlapping keep ranges are averaged frame by frame. Otherwise keep
    /// ranges partition the latent.
    pub averaged: bool,
}

impl StepLayout {
    /// Layout of a brick plan: short end bricks run through full windows.
    pub fn from_plan(plan: &SegmentPlan, window: usize) -> Result<Self> {
        let len = plan.len();
        let windows = plan
            .segments
            .iter()
            .map(|seg| {
                if seg.len() > window {
                    return Err(Error::WindowExceeded {
                        start: seg.start,
                        end: seg.end,
                        window,
                    });
                }
                if len <= window {
                    // single brick covering a latent no longer than the window
                    return Ok(StepWindow {
                        input: seg.clone(),
                        keep: seg.clone(),
                    });
                }
                let rule = extension_rule(seg.clone(), len, window)?;
                Ok(StepWindow {
                    input: rule.extended,
                    keep: rule.keep,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            len,
            windows,
            averaged: false,
        })
    }

    /// Windows at `0, h, 2h, …` with `h = window − overlap`, the last one
    /// clamped to end at `len`.
    pub fn sliding(len: usize, window: usize, overlap: usize) -> Result<Self> {
        if overlap < 1 || overlap >= window {
            return Err(Error::InvalidOverlap { overlap, window });
        }
        if len < window {
            return Err(Error::LatentTooShort { len, window });
        }
        let hop = window - overlap;
        let mut windows = Vec::new();
        let mut start = 0;
        loop {
            if start + window >= len {
                let r = len - window..len;
                windows.push(StepWindow {
                    input: r.clone(),
                    keep: r,
                });
                break;
            }
            let r = start..start + window;
            windows.push(StepWindow {
                input: r.clone(),
                keep: r,
            });
            start += hop;
        }
        Ok(Self {
            len,
            windows,
            averaged: true,
        })
    }

    pub fn untiled(len: usize) -> Self {
        Self {
            len,
            windows: vec![StepWindow {
                input: 0..len,
                keep: 0..len,
            }],
            averaged: false,
        }
    }

    /// Layout of `strategy` at sampler step `step` on a latent of `len` frames.
    pub fn for_strategy(strategy: &StrategyConfig, len: usize, step: usize) -> Result<Self> {
        strategy.validate()?;
        match strategy.kind {
            StrategyKind::Untiled => Ok(Self::untiled(len)),
            StrategyKind::Concat | StrategyKind::Brick => {
                let config = BrickConfig::new(strategy.window, strategy.effective_stride(), len)?;
                Self::from_plan(&build_plan(&config, step), strategy.window)
            }
            StrategyKind::SlidingWindow => Self::sliding(len, strategy.window, strategy.overlap),
        }
    }

    /// Number of windows covering each frame.
    pub fn coverage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.len];
        for w in &self.windows {
            for c in &mut counts[w.keep.clone()] {
                *c += 1;
            }
        }
        counts
    }
}

/// Everything one step needs besides the latent.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub condition: &'a Condition,
    /// Sampler step index `k`; keys the per-window noise streams.
    pub step: usize,
    pub t: usize,
    pub t_prev: usize,
    pub eta: f64,
}

/// Runs independent per-window work sequentially or on a rayon pool.
/// Results never depend on which.
#[derive(Clone, Default)]
pub enum Executor {
    #[default]
    Sequential,
    Pool(Arc<rayon::ThreadPool>),
}

impl Executor {
    pub fn with_workers(workers: usize) -> Result<Self> {
        if workers <= 1 {
            return Ok(Executor::Sequential);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidStrategy(format!("cannot start {workers} workers: {e}")))?;
        Ok(Executor::Pool(Arc::new(pool)))
    }

    pub fn workers(&self) -> usize {
        match self {
            Executor::Sequential => 1,
            Executor::Pool(pool) => pool.current_num_threads(),
        }
    }

    /// `f(i)` for each `i` in `order`, returned indexed by `i`.
    pub fn map_indexed<T, F>(&self, order: &[usize], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let pairs: Vec<(usize, T)> = match self {
            Executor::Sequential => order
                .iter()
                .map(|&i| f(i).map(|v| (i, v)))
                .collect::<Result<_>>()?,
            Executor::Pool(pool) => pool.install(|| {
                order
                    .par_iter()
                    .map(|&i| f(i).map(|v| (i, v)))
                    .collect::<Result<_>>()
            })?,
        };
        let mut slots: Vec<Option<T>> = (0..order.len()).map(|_| None).collect();
        for (i, v) in pairs {
            slots[i] = Some(v);
        }
        Ok(slots
            .into_iter()
            .map(|s| s.expect("order is a permutation"))
            .collect())
    }
}

fn run_layout_in_order(
    z: &FrameSequence,
    layout: &StepLayout,
    ctx: &StepContext<'_>,
    rng: &SeededRng,
    executor: &Executor,
    order: &[usize],
) -> Result<FrameSequence> {
    if layout.len != z.len() {
        return Err(Error::LengthMismatch {
            expected: layout.len,
            actual: z.len(),
        });
    }
    let window = ctx.denoiser.window();
    for w in &layout.windows {
        if w.input.len() > window {
            return Err(Error::WindowExceeded {
                start: w.input.start,
                end: w.input.end,
                window,
            });
        }
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..layout.windows.len()).collect::<Vec<_>>() {
        return Err(Error::InvalidStrategy(
            "window order must be a permutation".into(),
        ));
    }

    let results = executor.map_indexed(order, |i| {
        let w = &layout.windows[i];
        let segment = z.slice(w.input.clone())?;
        let eps = ctx.denoiser.predict(&segment, ctx.t, ctx.condition)?;
        let mut stream = rng.split(&[ctx.step as u64, i as u64]);
        ddim_step(
            &segment,
            &eps,
            ctx.t,
            ctx.t_prev,
            ctx.schedule,
            ctx.eta,
            &mut stream,
        )
    })?;

    let d = z.channels();
    if !layout.averaged {
        let mut out = FrameSequence::zeros(z.len(), d);
        for (w, res) in layout.windows.iter().zip(&results) {
            let src = w.keep.start - w.input.start..w.keep.end - w.input.start;
            out.write_frames(w.keep.clone(), res, src);
        }
        return Ok(out);
    }

    // accumulate in window order so the sum is independent of execution order
    let mut sum = vec![0.0; z.len() * d];
    let mut count = vec![0usize; z.len()];
    for (w, res) in layout.windows.iter().zip(&results) {
        for frame in w.keep.clone() {
            count[frame] += 1;
            let local = res.frame(frame - w.input.start);
            for (s, v) in sum[frame * d..(frame + 1) * d].iter_mut().zip(local) {
                *s += v;
            }
        }
    }
    for (frame, &c) in count.iter().enumerate() {
        assert!(c > 0, "sliding layout leaves frame {frame} uncovered");
        for s in &mut sum[frame * d..(frame + 1) * d] {
            *s /= c as f64;
        }
    }
    FrameSequence::new(z.len(), d, sum)
}

/// One step under an arbitrary layout, windows in index order.
pub fn layout_step(
    z: &FrameSequence,
    layout: &StepLayout,
    ctx: &StepContext<'_>,
    rng: &SeededRng,
    executor: &Executor,
) -> Result<FrameSequence> {
    let order: Vec<usize> = (0..layout.windows.len()).collect();
    run_layout_in_order(z, layout, ctx, rng, executor, &order)
}

/// One brick-to-wall step: every brick denoised independently, short end
/// bricks through an extended full window with the surplus discarded.
pub fn brick_step(
    z: &FrameSequence,
    plan: &SegmentPlan,
    ctx: &StepContext<'_>,
    rng: &SeededRng,
    executor: &Executor,
) -> Result<FrameSequence> {
    let layout = StepLayout::from_plan(plan, ctx.denoiser.window())?;
    layout_step(z, &layout, ctx, rng, executor)
}

/// [`brick_step`] visiting the bricks in `order`. Output does not depend on it.
pub fn brick_step_in_order(
    z: &FrameSequence,
    plan: &SegmentPlan,
    ctx: &StepContext<'_>,
    rng: &SeededRng,
    order: &[usize],
) -> Result<FrameSequence> {
    let layout = StepLayout::from_plan(plan, ctx.denoiser.window())?;
    run_layout_in_order(z, &layout, ctx, rng, &Executor::Sequential, order)
}

/// One sliding-window step: overlapping windows denoised independently, each
/// frame set to the mean of the windows covering it.
pub fn sliding_window_step(
    z: &FrameSequence,
    window: usize,
    overlap: usize,
    ctx: &StepContext<'_>,
    rng: &SeededRng,
    executor: &Executor,
) -> Result<FrameSequence> {
    let layout = StepLayout::sliding(z.len(), window, overlap)?;
    layout_step(z, &layout, ctx, rng, executor)
}

/// A configured tiled sampler.
pub struct Sampler<'a> {
    pub strategy: StrategyConfig,
    pub schedule: &'a NoiseSchedule,
    pub ladder: &'a StepLadder,
    pub denoiser: &'a dyn Denoiser,
    pub condition: Condition,
    pub executor: Executor,
}

impl<'a> Sampler<'a> {
    pub fn new(
        strategy: StrategyConfig,
        schedule: &'a NoiseSchedule,
        ladder: &'a StepLadder,
        denoiser: &'a dyn Denoiser,
    ) -> Result<Self> {
        strategy.validate()?;
        if ladder.timesteps()[0] > schedule.train_steps() {
            return Err(Error::InvalidScheduleParams(format!(
                "ladder starts at {} beyond T={}",
                ladder.timesteps()[0],
                schedule.train_steps()
            )));
        }
        Ok(Self {
            strategy,
            schedule,
            ladder,
            denoiser,
            condition: Condition::default(),
            executor: Executor::Sequential,
        })
    }

    pub fn with_executor(mut self, executor: Executor) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }

    /// Step `k` applied to `z`, with per-window noise drawn from `rng`'s
    /// children.
    pub fn step(&self, z: &FrameSequence, k: usize, rng: &SeededRng) -> Result<FrameSequence> {
        let (t, t_prev) = self.ladder.pair(k);
        let layout = StepLayout::for_strategy(&self.strategy, z.len(), k)?;
        let ctx = StepContext {
            schedule: self.schedule,
            denoiser: self.denoiser,
            condition: &self.condition,
            step: k,
            t,
            t_prev,
            eta: self.strategy.eta,
        };
        layout_step(z, &layout, &ctx, rng, &self.executor)
    }

    /// Runs the first `steps` sampler steps from `initial` without cropping.
    pub fn run_steps(
        &self,
        initial: FrameSequence,
        steps: usize,
        rng: &SeededRng,
    ) -> Result<FrameSequence> {
        assert!(
            steps <= self.ladder.steps(),
            "ladder has only {} steps",
            self.ladder.steps()
        );
        (0..steps).try_fold(initial, |z, k| self.step(&z, k, rng))
    }

    /// Runs the whole ladder from `initial` (padded length) to the clean
    /// padded latent.
    pub fn run_chain(&self, initial: FrameSequence, rng: &SeededRng) -> Result<FrameSequence> {
        self.run_steps(initial, self.ladder.steps(), rng)
    }

    /// Initial padded noise for `seed`.
    pub fn initial_noise(&self, frames: usize, channels: usize, seed: u64) -> FrameSequence {
        let len = self.strategy.padded_length(frames);
        FrameSequence::standard_normal(
            len,
            channels,
            &mut SeededRng::new(seed).split(&[INITIAL_NOISE_KEY]),
        )
    }

    /// Draws `F + 2f` frames of noise, denoises them over the ladder and
    /// returns the middle `F` frames.
    pub fn sample(&self, frames: usize, channels: usize, seed: u64) -> Result<FrameSequence> {
        if frames < 1 || channels < 1 {
            return Err(Error::ShapeMismatch(
                "need at least one frame and one channel".into(),
            ));
        }
        let rng = SeededRng::new(seed);
        let z = self.run_chain(self.initial_noise(frames, channels, seed), &rng)?;
        crop_middle(&z, frames, self.strategy.window)
    }
}

/// One sequential sampling run; see [`Sampler::sample`].
pub fn sample(
    strategy: StrategyConfig,
    schedule: &NoiseSchedule,
    ladder: &StepLadder,
    denoiser: &dyn Denoiser,
    frames: usize,
    channels: usize,
    seed: u64,
) -> Result<FrameSequence> {
    Sampler::new(strategy, schedule, ladder, denoiser)?.sample(frames, channels, seed)
}
