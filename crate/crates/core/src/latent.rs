//! The latent being denoised: `len` frames of `channels` values each.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Frame-major latent, `values[frame * channels + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    len: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FrameSequence {
    pub fn new(len: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if len == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "need at least one frame and one channel, got {len}x{channels}"
            )));
        }
        if values.len() != len * channels {
            return Err(Error::ShapeMismatch(format!(
                "{len}x{channels} sequence given {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite latent value".into()));
        }
        Ok(Self {
            len,
            channels,
            values,
        })
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        assert!(len > 0 && channels > 0, "empty frame sequence");
        Self {
            len,
            channels,
            values: vec![0.0; len * channels],
        }
    }

    /// Single-channel sequence.
    pub fn from_frames(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// Standard normal noise from `rng`, drawn frame by frame.
    pub fn standard_normal(len: usize, channels: usize, rng: &mut SeededRng) -> Self {
        Self {
            len,
            channels,
            values: rng.sample_standard_normal(len * channels),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, frame: usize, channel: usize) -> f64 {
        self.values[frame * self.channels + channel]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.channels..(frame + 1) * self.channels]
    }

    /// Values of one channel across all frames.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.len).map(|i| self.get(i, channel)).collect()
    }

    pub fn same_shape(&self, other: &FrameSequence) -> bool {
        self.len == other.len && self.channels == other.channels
    }

    /// Copy of frames `range`.
    pub fn slice(&self, range: Range<usize>) -> Result<FrameSequence> {
        if range.start >= range.end || range.end > self.len {
            return Err(Error::ShapeMismatch(format!(
                "frame range {range:?} outside a sequence of {} frames",
                self.len
            )));
        }
        let d = self.channels;
        Ok(FrameSequence {
            len: range.len(),
            channels: d,
            values: self.values[range.start * d..range.end * d].to_vec(),
        })
    }

    /// Overwrites frames `dest` with frames `src` of `source`.
    pub fn write_frames(&mut self, dest: Range<usize>, source: &FrameSequence, src: Range<usize>) {
        assert_eq!(dest.len(), src.len());
        assert_eq!(self.channels, source.channels);
        let d = self.channels;
        self.values[dest.start * d..dest.end * d]
            .copy_from_slice(&source.values[src.start * d..src.end * d]);
    }

    pub fn scaled(&self, s: f64) -> FrameSequence {
        FrameSequence {
            len: self.len,
            channels: self.channels,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &FrameSequence) -> bool {
        self.same_shape(other)
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_and_write_back() {
        let seq = FrameSequence::new(4, 2, (0..8).map(f64::from).collect()).unwrap();
        let mid = seq.slice(1..3).unwrap();
        assert_eq!(mid.values(), &[2.0, 3.0, 4.0, 5.0]);

        let mut out = FrameSequence::zeros(4, 2);
        out.write_frames(2..3, &mid, 1..2);
        assert_eq!(out.frame(2), &[4.0, 5.0]);
        assert_eq!(out.channel(1), vec![0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(FrameSequence::new(2, 2, vec![0.0; 3]).is_err());
        assert!(FrameSequence::new(0, 2, vec![]).is_err());
        assert!(FrameSequence::new(1, 1, vec![f64::NAN]).is_err());
        let seq = FrameSequence::zeros(3, 1);
        assert!(seq.slice(2..4).is_err());
        assert!(seq.slice(1..1).is_err());
    }
}
