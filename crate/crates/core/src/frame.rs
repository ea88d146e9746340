//! Scalar frames and ordered frame sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major grid of normalized intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Frame {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::param(format!(
                "frame buffer holds {} values, {width}x{height} needs {}",
                data.len(),
                width * height
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite pixel value {bad}")));
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Frame {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Value at `(x, y)` with coordinates clamped to the frame.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixelwise combination of two frames of equal shape.
    pub fn zip_map(&self, other: &Frame, f: impl Fn(f64, f64) -> f64) -> Result<Frame> {
        self.check_shape(other)?;
        Ok(Frame {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_shape(&self, other: &Frame) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// What a sequence holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelTag {
    FluorescenceClean,
    Reference,
    Leakage,
    ReadNoise,
    NoisyFv,
    Denoised,
}

impl ChannelTag {
    pub const ALL: [ChannelTag; 6] = [
        ChannelTag::FluorescenceClean,
        ChannelTag::Reference,
        ChannelTag::Leakage,
        ChannelTag::ReadNoise,
        ChannelTag::NoisyFv,
        ChannelTag::Denoised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelTag::FluorescenceClean => "fluorescence_clean",
            ChannelTag::Reference => "reference",
            ChannelTag::Leakage => "leakage",
            ChannelTag::ReadNoise => "read_noise",
            ChannelTag::NoisyFv => "noisy_fv",
            ChannelTag::Denoised => "denoised",
        }
    }

    /// Range a pixel of this channel may occupy.
    ///
    /// Bias-removed dark frames are signed; noisy and denoised frames are
    /// rescaled after quantization and may exceed one.
    pub fn value_range(self) -> (f64, f64) {
        match self {
            ChannelTag::ReadNoise => (-1.0, 1.0),
            ChannelTag::NoisyFv | ChannelTag::Denoised => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for ChannelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown channel tag '{s}'")))
    }
}

/// Temporally ordered frames of identical shape. Index 0 is the first
/// captured frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    fps: f64,
    tag: ChannelTag,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>, fps: f64, tag: ChannelTag) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::param("sequence has no frames"));
        };
        for f in &frames[1..] {
            first.check_shape(f)?;
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::param(format!("fps must be positive, got {fps}")));
        }
        Ok(VideoSequence { frames, fps, tag })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn tag(&self) -> ChannelTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: ChannelTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    pub fn check_compatible(&self, other: &VideoSequence) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        self.frames[0].check_shape(&other.frames[0])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }
}

impl<'a> IntoIterator for &'a VideoSequence {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}
