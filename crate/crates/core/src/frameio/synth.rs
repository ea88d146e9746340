use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scene, DEFAULT_FPS};
use crate::error::{Error, Result};
use crate::frame::{ChannelTag, Frame, VideoSequence};
use crate::rng::RngStream;

const TEXTURE_COMPONENTS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceTexture {
    /// Random smooth sinusoid mixture in `[0.1, 0.9]`.
    Textured,
    Flat(f64),
}

/// Parameters of a synthetic scene. All content moves rigidly with
/// `velocity` pixels per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub blobs: usize,
    pub velocity: (f64, f64),
    /// Specular spots per 10^4 pixels of swept scene area.
    pub specular_density: f64,
    /// Leakage fraction of the reference intensity.
    pub alpha: f64,
    pub reference: ReferenceTexture,
    pub fps: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 256,
            height: 256,
            length: 60,
            blobs: 3,
            velocity: (1.0, 0.0),
            specular_density: 2.0,
            alpha: 0.5,
            reference: ReferenceTexture::Textured,
            fps: DEFAULT_FPS,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.length == 0 {
            return Err(Error::param(format!(
                "scene must have positive size and length, got {}x{}x{}",
                self.width, self.height, self.length
            )));
        }
        if !(self.velocity.0.is_finite() && self.velocity.1.is_finite()) {
            return Err(Error::param("velocity must be finite"));
        }
        if !(self.specular_density.is_finite() && self.specular_density >= 0.0) {
            return Err(Error::param("specular_density must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let ReferenceTexture::Flat(v) = self.reference {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!(
                    "flat reference must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

struct Spot {
    cx: f64,
    cy: f64,
    inv_two_var: f64,
    amplitude: f64,
}

impl Spot {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        self.amplitude * (-(dx * dx + dy * dy) * self.inv_two_var).exp()
    }
}

/// Static scene content evaluated in scene coordinates.
struct SceneField {
    waves: Vec<Wave>,
    wave_norm: f64,
    flat: Option<f64>,
    blobs: Vec<Spot>,
    speculars: Vec<Spot>,
    alpha: f64,
}

impl SceneField {
    fn sample(spec: &SceneSpec, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 0x5ce7e, 0).rng();
        let (w, h) = (spec.width as f64, spec.height as f64);

        let waves: Vec<Wave> = (0..TEXTURE_COMPONENTS)
            .map(|_| {
                let wavelength = rng.random_range(20.0..80.0);
                let theta = rng.random_range(0.0..TAU);
                let k = TAU / wavelength;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amplitude: rng.random_range(0.3..1.0),
                }
            })
            .collect();
        let wave_norm = waves.iter().map(|w| w.amplitude).sum::<f64>();

        let side = w.min(h);
        let blobs = (0..spec.blobs)
            .map(|_| {
                let sigma = rng.random_range(0.04..0.12) * side;
                Spot {
                    cx: rng.random_range(0.0..w),
                    cy: rng.random_range(0.0..h),
                    inv_two_var: 1.0 / (2.0 * sigma * sigma),
                    amplitude: rng.random_range(0.5..1.0),
                }
            })
            .collect();

        // Speculars cover everything the window sweeps over the sequence.
        let travel = spec.length.saturating_sub(1) as f64;
        let (sx, sy) = (spec.velocity.0 * travel, spec.velocity.1 * travel);
        let (x0, x1) = ((-sx).min(0.0), w + (-sx).max(0.0));
        let (y0, y1) = ((-sy).min(0.0), h + (-sy).max(0.0));
        let count = (spec.specular_density * (x1 - x0) * (y1 - y0) / 1.0e4).round() as usize;
        let speculars = (0..count)
            .map(|_| {
                let sigma = rng.random_range(1.0..2.5);
                Spot {
                    cx: rng.random_range(x0..x1),
                    cy: rng.random_range(y0..y1),
                    inv_two_var: 1.0 / (2.0 * sigma * sigma),
                    amplitude: rng.random_range(0.6..1.0),
                }
            })
            .collect();

        SceneField {
            waves,
            wave_norm,
            flat: match spec.reference {
                ReferenceTexture::Flat(v) => Some(v),
                ReferenceTexture::Textured => None,
            },
            blobs,
            speculars,
            alpha: spec.alpha,
        }
    }

    fn reference(&self, x: f64, y: f64) -> f64 {
        if let Some(v) = self.flat {
            return v;
        }
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin())
            .sum();
        0.5 + 0.4 * s / self.wave_norm
    }

    fn fluorescence(&self, x: f64, y: f64) -> f64 {
        self.blobs
            .iter()
            .map(|b| b.eval(x, y))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    fn leakage(&self, reference: f64, x: f64, y: f64) -> f64 {
        let spec: f64 = self.speculars.iter().map(|s| s.eval(x, y)).sum();
        (self.alpha * reference + spec).clamp(0.0, 1.0)
    }
}

/// Generates clean fluorescence, reference and leakage sequences.
///
/// Frame `t` shows the static scene shifted by `t * velocity`; scene
/// coordinates are `x - vx * t`, so integer velocities reproduce pixels
/// exactly between frames.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let field = SceneField::sample(spec, seed);
    let (w, h) = (spec.width, spec.height);

    let mut clean = Vec::with_capacity(spec.length);
    let mut reference = Vec::with_capacity(spec.length);
    let mut leakage = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let (ox, oy) = (spec.velocity.0 * t as f64, spec.velocity.1 * t as f64);
        let mut c = Frame::zeros(w, h);
        let mut r = Frame::zeros(w, h);
        let mut l = Frame::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x as f64 - ox, y as f64 - oy);
                let rv = field.reference(sx, sy);
                c.set(x, y, field.fluorescence(sx, sy));
                r.set(x, y, rv);
                l.set(x, y, field.leakage(rv, sx, sy));
            }
        }
        clean.push(c);
        reference.push(r);
        leakage.push(l);
    }

    Scene::new(
        format!("synthetic-{seed}"),
        VideoSequence::new(clean, spec.fps, ChannelTag::FluorescenceClean)?,
        VideoSequence::new(reference, spec.fps, ChannelTag::Reference)?,
        Some(VideoSequence::new(leakage, spec.fps, ChannelTag::Leakage)?),
    )
}
