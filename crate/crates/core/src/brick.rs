//! Brick-to-wall geometry.
//!
//! At sampler step `k` the latent is cut into bricks of `window` frames whose
//! boundaries sit at `offset_k + i·window`, with `offset_k = stride·k mod
//! window`. Consecutive steps are staggered by `stride` frames like courses of
//! a brick wall. A short brick at either end of the latent is denoised through
//! a full-size window and only its own frames are kept.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::latent::FrameSequence;

/// Segment length, per-step shift and latent length, in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrickConfig {
    window: usize,
    stride: usize,
    len: usize,
}

impl BrickConfig {
    pub fn new(window: usize, stride: usize, len: usize) -> Result<Self> {
        if window < 1 {
            return Err(Error::InvalidBrickConfig(
                "window must be at least 1".into(),
            ));
        }
        if stride >= window {
            return Err(Error::InvalidBrickConfig(format!(
                "stride {stride} must be below the window {window}"
            )));
        }
        if len < 1 {
            return Err(Error::InvalidBrickConfig(
                "latent length must be at least 1".into(),
            ));
        }
        Ok(Self {
            window,
            stride,
            len,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `stride·k mod window`.
pub fn offset_for_step(stride: usize, window: usize, step: usize) -> Result<usize> {
    if window < 1 || stride >= window {
        return Err(Error::InvalidBrickConfig(format!(
            "need 0 <= stride < window, got stride={stride}, window={window}"
        )));
    }
    let w = window as u128;
    Ok(((stride as u128 % w) * (step as u128 % w) % w) as usize)
}

/// The bricks of one sampler step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub step: usize,
    pub offset: usize,
    pub segments: Vec<Range<usize>>,
}

impl SegmentPlan {
    /// Total frames covered.
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Bricks of `window` frames with boundaries at `offset + i·window`, covering
/// `[0, len)`. A latent no longer than the window is a single brick.
#[allow(clippy::single_range_in_vec_init)]
pub fn plan_for_offset(window: usize, len: usize, offset: usize) -> Vec<Range<usize>> {
    if len <= window {
        return vec![0..len];
    }
    let mut segments = Vec::with_capacity(len / window + 2);
    let mut start = 0;
    if offset > 0 {
        segments.push(0..offset);
        start = offset;
    }
    while start < len {
        let end = (start + window).min(len);
        segments.push(start..end);
        start = end;
    }
    segments
}

pub fn build_plan(config: &BrickConfig, step: usize) -> SegmentPlan {
    let offset = offset_for_step(config.stride, config.window, step)
        .expect("BrickConfig guarantees stride < window");
    SegmentPlan {
        step,
        offset,
        segments: plan_for_offset(config.window, config.len, offset),
    }
}

/// How a brick is fed to the denoiser: frames `extended` go in, frames `keep`
/// are written back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionRule {
    pub extended: Range<usize>,
    pub keep: Range<usize>,
}

/// Window for `segment` in a latent of `len` frames. A short first brick
/// extends forward to `[0, window)`, a short last brick backward to
/// `[len − window, len)`. Full-size bricks map to themselves.
pub fn extension_rule(segment: Range<usize>, len: usize, window: usize) -> Result<ExtensionRule> {
    if segment.start >= segment.end || segment.end > len {
        return Err(Error::InvalidBrickConfig(format!(
            "segment {segment:?} is not a non-empty range inside [0, {len})"
        )));
    }
    if segment.len() > window {
        return Err(Error::SegmentTooLong {
            len: segment.len(),
            window,
        });
    }
    if segment.len() == window {
        return Ok(ExtensionRule {
            extended: segment.clone(),
            keep: segment,
        });
    }
    if len < window {
        return Err(Error::LatentTooShort { len, window });
    }
    let ext_start = if segment.start == 0 {
        0
    } else {
        segment.start.min(len - window)
    };
    Ok(ExtensionRule {
        extended: ext_start..ext_start + window,
        keep: segment,
    })
}

/// Padded latent length `F + 2f`.
pub fn padded_length(frames: usize, window: usize) -> usize {
    frames + 2 * window
}

/// Frames `[f, f + F)` of a padded latent.
pub fn crop_middle(seq: &FrameSequence, frames: usize, window: usize) -> Result<FrameSequence> {
    let expected = padded_length(frames, window);
    if seq.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: seq.len(),
        });
    }
    seq.slice(window..window + frames)
}
