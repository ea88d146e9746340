use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ChannelTag, Frame, VideoSequence};
use crate::rng::RngStream;

/// Time-ordered, bias-removed dark frames as captured.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadNoiseBank {
    frames: Vec<Frame>,
    source_id: String,
}

/// Shape of a procedurally generated dark-frame bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProceduralBankSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    /// Per-pixel Gaussian standard deviation.
    pub sigma: f64,
    /// Standard deviation of the offset shared by each row.
    pub row_sigma: f64,
    /// Distance between the two per-frame flicker levels.
    pub flicker_step: f64,
    /// Fraction of frames sitting on the high flicker level.
    pub flicker_high_fraction: f64,
}

impl Default for ProceduralBankSpec {
    fn default() -> Self {
        ProceduralBankSpec {
            width: 256,
            height: 256,
            length: 512,
            sigma: 0.012,
            row_sigma: 0.004,
            flicker_step: 0.01,
            flicker_high_fraction: 0.5,
        }
    }
}

impl ReadNoiseBank {
    pub fn new(frames: Vec<Frame>, source_id: impl Into<String>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::param("read-noise bank is empty"));
        };
        for f in &frames[1..] {
            first.check_shape(f)?;
        }
        Ok(ReadNoiseBank {
            frames,
            source_id: source_id.into(),
        })
    }

    pub fn from_sequence(seq: VideoSequence, source_id: impl Into<String>) -> Result<Self> {
        Self::new(seq.into_frames(), source_id)
    }

    /// A bank of row-correlated Gaussian dark frames with a two-level
    /// per-frame flicker offset. The flicker levels are centred on zero
    /// over the expected mix so the bank stays bias-free.
    pub fn procedural(spec: &ProceduralBankSpec, seed: u64) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 || spec.length == 0 {
            return Err(Error::param(
                "procedural bank needs positive size and length",
            ));
        }
        if !(spec.sigma >= 0.0 && spec.row_sigma >= 0.0 && spec.flicker_step >= 0.0) {
            return Err(Error::param(
                "procedural bank deviations must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&spec.flicker_high_fraction) {
            return Err(Error::param("flicker_high_fraction must lie in [0, 1]"));
        }
        let pixel = Normal::new(0.0, spec.sigma).map_err(|e| Error::param(e.to_string()))?;
        let row = Normal::new(0.0, spec.row_sigma).map_err(|e| Error::param(e.to_string()))?;
        let low = -spec.flicker_step * spec.flicker_high_fraction;
        let high = low + spec.flicker_step;

        let stream = RngStream::new(seed, 0xda_7c, 0);
        let frames = (0..spec.length)
            .map(|t| {
                let mut rng = stream.for_frame(t as u64).rng();
                let offset = if rng.random::<f64>() < spec.flicker_high_fraction {
                    high
                } else {
                    low
                };
                let mut f = Frame::zeros(spec.width, spec.height);
                for y in 0..spec.height {
                    let r = row.sample(&mut rng) + offset;
                    for x in 0..spec.width {
                        let v = (pixel.sample(&mut rng) + r).clamp(-1.0, 1.0);
                        f.set(x, y, v);
                    }
                }
                f
            })
            .collect();
        Self::new(frames, format!("procedural-{seed}"))
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    /// Start index of a uniformly placed window of `length` frames.
    pub fn sample_start(&self, length: usize, stream: RngStream) -> Result<usize> {
        if length == 0 || length > self.frames.len() {
            return Err(Error::BankTooShort {
                available: self.frames.len(),
                requested: length,
            });
        }
        let last = self.frames.len() - length;
        if last == 0 {
            return Ok(0);
        }
        Ok(stream.rng().random_range(0..=last))
    }

    /// `length` time-contiguous dark frames starting at a uniform offset.
    pub fn sample(&self, length: usize, stream: RngStream) -> Result<VideoSequence> {
        let start = self.sample_start(length, stream)?;
        VideoSequence::new(
            self.frames[start..start + length].to_vec(),
            crate::frameio::DEFAULT_FPS,
            ChannelTag::ReadNoise,
        )
    }
}
