//! Calibrated fluorescence camera noise.
//!
//! A noisy frame is built from the clean fluorescence `S`, a leakage frame
//! `L` and a bias-removed dark frame `R`:
//!
//! ```text
//! F = Quant(K * Poisson(S_m * S + L_m * L) + R / R_m) / (K * S_m)
//! ```
//!
//! The inner expression is the camera-domain measurement in `[0, 1]`; the
//! outer rescale makes `E[F] = S` when there is no leakage or read noise, so
//! `F` may exceed one.

mod bank;
mod poisson;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ChannelTag, Frame, VideoSequence};
use crate::frameio::Scene;
use crate::leakage::LeakagePredictor;
use crate::rng::{self, RngStream};

pub use bank::{ProceduralBankSpec, ReadNoiseBank};
pub use poisson::sample_poisson;

/// Calibrated inverse gain of the reference camera.
pub const PAPER_TEST_INV_K: f64 = 1763.5;
/// Read-noise divisor used for evaluation.
pub const PAPER_TEST_R_M: f64 = 6.0;
pub const DEFAULT_BIT_DEPTH: u32 = 12;

/// Training-time augmentation ranges.
pub const TRAIN_INV_K_RANGE: (f64, f64) = (1200.0, 2400.0);
pub const TRAIN_R_M_RANGE: (f64, f64) = (4.0, 8.0);
pub const TRAIN_S_M_MIN: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Maximum fluorescence photons per pixel.
    pub s_m: f64,
    /// Maximum leakage photons per pixel.
    pub l_m: f64,
    /// Read-noise divisor.
    pub r_m: f64,
    /// Camera gain, normalized intensity per photon.
    pub k: f64,
    pub bit_depth: u32,
}

impl NoiseParams {
    pub fn new(s_m: f64, l_m: f64, r_m: f64, k: f64, bit_depth: u32) -> Result<Self> {
        let p = NoiseParams {
            s_m,
            l_m,
            r_m,
            k,
            bit_depth,
        };
        p.validate()?;
        Ok(p)
    }

    /// Calibrated camera (`1/K = 1763.5`, `R_m = 6`, 12 bits) at the given
    /// photon levels.
    pub fn paper_test(s_m: f64, l_m: f64) -> Result<Self> {
        Self::new(
            s_m,
            l_m,
            PAPER_TEST_R_M,
            1.0 / PAPER_TEST_INV_K,
            DEFAULT_BIT_DEPTH,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.s_m, self.l_m, self.r_m, self.k]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("noise parameters must be finite"));
        }
        if self.s_m <= 0.0 {
            return Err(Error::param(format!(
                "S_m must be positive, got {}",
                self.s_m
            )));
        }
        if self.l_m < 0.0 {
            return Err(Error::param(format!(
                "L_m must be non-negative, got {}",
                self.l_m
            )));
        }
        if self.r_m <= 0.0 {
            return Err(Error::param(format!(
                "R_m must be positive, got {}",
                self.r_m
            )));
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(Error::param(format!(
                "K must lie in (0, 1], got {}",
                self.k
            )));
        }
        if !(1..=30).contains(&self.bit_depth) {
            return Err(Error::param(format!(
                "bit depth must lie in [1, 30], got {}",
                self.bit_depth
            )));
        }
        Ok(())
    }

    pub fn inv_k(&self) -> f64 {
        1.0 / self.k
    }

    /// `L_m / S_m`, the leakage level relative to the signal.
    pub fn leakage_ratio(&self) -> f64 {
        self.l_m / self.s_m
    }

    pub fn with_levels(self, s_m: f64, l_m: f64) -> Result<Self> {
        Self::new(s_m, l_m, self.r_m, self.k, self.bit_depth)
    }
}

/// JSON form of the noise parameters, `{S_m, L_m, R_m, inv_K, bit_depth, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(rename = "S_m")]
    pub s_m: f64,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "R_m", default = "default_r_m")]
    pub r_m: f64,
    #[serde(rename = "inv_K", default = "default_inv_k")]
    pub inv_k: f64,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_r_m() -> f64 {
    PAPER_TEST_R_M
}

fn default_inv_k() -> f64 {
    PAPER_TEST_INV_K
}

fn default_bit_depth() -> u32 {
    DEFAULT_BIT_DEPTH
}

impl NoiseConfig {
    pub fn params(&self) -> Result<NoiseParams> {
        if !(self.inv_k.is_finite() && self.inv_k >= 1.0) {
            return Err(Error::param(format!(
                "inv_K must be at least 1, got {}",
                self.inv_k
            )));
        }
        NoiseParams::new(
            self.s_m,
            self.l_m,
            self.r_m,
            1.0 / self.inv_k,
            self.bit_depth,
        )
    }

    pub fn from_params(p: &NoiseParams, seed: u64) -> Self {
        NoiseConfig {
            s_m: p.s_m,
            l_m: p.l_m,
            r_m: p.r_m,
            inv_k: p.inv_k(),
            bit_depth: p.bit_depth,
            seed,
        }
    }
}

/// Rounds to the nearest multiple of `2^-bit_depth` (ties away from zero)
/// and clips to `[0, 1]`.
#[inline]
pub fn quantize(x: f64, bit_depth: u32) -> f64 {
    let levels = (1u64 << bit_depth) as f64;
    // Adding +0.0 maps a rounded -0.0 to +0.0.
    ((x * levels).round() / levels).clamp(0.0, 1.0) + 0.0
}

fn check_inputs(s: &Frame, l: &Frame, r: Option<&Frame>) -> Result<()> {
    s.check_shape(l)?;
    if let Some(r) = r {
        s.check_shape(r)?;
    }
    Ok(())
}

/// Camera-domain measurement `Quant(K * Poisson(S_m*S + L_m*L) + R/R_m)`.
///
/// `read_noise` of `None` is the noiseless-readout limit. Poisson draws are
/// taken in row-major order from `stream`.
pub fn simulate_camera_frame(
    s: &Frame,
    l: &Frame,
    read_noise: Option<&Frame>,
    p: &NoiseParams,
    stream: RngStream,
) -> Result<Frame> {
    check_inputs(s, l, read_noise)?;
    let mut rng = stream.rng();
    let mut out = Frame::zeros(s.width(), s.height());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let rate = p.s_m * s.data()[i] + p.l_m * l.data()[i];
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::param(format!("Poisson rate {rate} at pixel {i}")));
        }
        let photons = sample_poisson(&mut rng, rate) as f64;
        let dark = read_noise.map_or(0.0, |r| r.data()[i] / p.r_m);
        *o = quantize(p.k * photons + dark, p.bit_depth);
    }
    Ok(out)
}

/// A noisy fluorescence frame on the clean-signal scale.
pub fn simulate_frame(
    s: &Frame,
    l: &Frame,
    read_noise: Option<&Frame>,
    p: &NoiseParams,
    stream: RngStream,
) -> Result<Frame> {
    let scale = 1.0 / (p.k * p.s_m);
    let mut f = simulate_camera_frame(s, l, read_noise, p, stream)?;
    f.data_mut().iter_mut().for_each(|v| *v *= scale);
    Ok(f)
}

/// Where the leakage frames of a simulation come from.
#[derive(Clone, Copy, Debug)]
pub enum LeakageSource<'a> {
    /// The scene's stored leakage channel.
    Oracle,
    /// A predictor applied to each reference frame.
    Predictor(&'a LeakagePredictor),
}

/// Leakage frames for a scene under `source`.
pub fn leakage_frames(scene: &Scene, source: LeakageSource<'_>) -> Result<Vec<Frame>> {
    match source {
        LeakageSource::Oracle => scene
            .leakage
            .as_ref()
            .map(|l| l.frames().to_vec())
            .ok_or_else(|| Error::MissingChannel(format!("{} has no leakage", scene.id))),
        LeakageSource::Predictor(pred) => scene
            .reference
            .iter()
            .enumerate()
            .map(|(t, r)| pred.predict(r, scene.leakage.as_ref().map(|l| l.frame(t))))
            .collect(),
    }
}

/// Simulates the noisy fluorescence video of a scene.
///
/// Frame `t` draws shot noise from stream `(seed, id, t)`; the read-noise
/// window is one contiguous draw of the full length from the bank. A bank
/// of `None` means no read noise. Frames are simulated in parallel with
/// results identical to a sequential run.
pub fn simulate_sequence(
    scene: &Scene,
    source: LeakageSource<'_>,
    bank: Option<&ReadNoiseBank>,
    p: &NoiseParams,
    seed: u64,
) -> Result<VideoSequence> {
    simulate_sequence_with_id(scene, source, bank, p, seed, rng::sequence_id(&scene.id))
}

/// [`simulate_sequence`] with an explicit stream id.
pub fn simulate_sequence_with_id(
    scene: &Scene,
    source: LeakageSource<'_>,
    bank: Option<&ReadNoiseBank>,
    p: &NoiseParams,
    seed: u64,
    sequence_id: u64,
) -> Result<VideoSequence> {
    p.validate()?;
    let n = scene.len();
    let leakage = leakage_frames(scene, source)?;
    let read = match bank {
        Some(b) => {
            if b.shape() != scene.clean.shape() {
                return Err(Error::ShapeMismatch {
                    expected: scene.clean.shape(),
                    actual: b.shape(),
                });
            }
            let stream = RngStream::new(seed, sequence_id, rng::READ_NOISE_STREAM);
            Some(b.sample(n, stream)?)
        }
        None => None,
    };

    let base = RngStream::new(seed, sequence_id, 0);
    let frames = (0..n)
        .into_par_iter()
        .map(|t| {
            simulate_frame(
                scene.clean.frame(t),
                &leakage[t],
                read.as_ref().map(|r| r.frame(t)),
                p,
                base.for_frame(t as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, scene.clean.fps(), ChannelTag::NoisyFv)
}

/// Draws augmentation parameters: `1/K ~ U[1200, 2400]`,
/// `S_m ~ U[10, 1/(2K)]`, `L_m ~ U[0, S_m]`, `R_m ~ U[4, 8]`, 12 bits.
pub fn sample_training_params<R: Rng + ?Sized>(rng: &mut R) -> NoiseParams {
    let inv_k = rng.random_range(TRAIN_INV_K_RANGE.0..=TRAIN_INV_K_RANGE.1);
    let s_m = rng.random_range(TRAIN_S_M_MIN..=inv_k / 2.0);
    let l_m = rng.random_range(0.0..=s_m);
    let r_m = rng.random_range(TRAIN_R_M_RANGE.0..=TRAIN_R_M_RANGE.1);
    NoiseParams {
        s_m,
        l_m,
        r_m,
        k: 1.0 / inv_k,
        bit_depth: DEFAULT_BIT_DEPTH,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameio::{generate_synthetic_scene, SceneSpec};

    fn camera(s_m: f64, l_m: f64) -> NoiseParams {
        NoiseParams::paper_test(s_m, l_m).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.5, 12), 0.5);
        assert_eq!(quantize(1.2, 12), 1.0);
        assert_eq!(quantize(1.0 / 8192.0, 12), 1.0 / 4096.0);
        assert_eq!(quantize(-0.3, 12), 0.0);
        assert_eq!(quantize(0.26, 1), 0.5);
    }

    #[test]
    fn params_validation() {
        assert!(NoiseParams::new(0.0, 0.0, 6.0, 0.001, 12).is_err());
        assert!(NoiseParams::new(10.0, -1.0, 6.0, 0.001, 12).is_err());
        assert!(NoiseParams::new(10.0, 0.0, 0.0, 0.001, 12).is_err());
        assert!(NoiseParams::new(10.0, 0.0, 6.0, 1.5, 12).is_err());
        assert!(NoiseParams::new(10.0, 0.0, 6.0, 0.001, 0).is_err());
        assert!(NoiseParams::new(10.0, 0.0, 6.0, 0.001, 12).is_ok());
    }

    #[test]
    fn config_json_uses_published_names() {
        let cfg: NoiseConfig = serde_json::from_str(
            r#"{"S_m": 50, "L_m": 25, "R_m": 6, "inv_K": 1763.5, "bit_depth": 12, "seed": 3}"#,
        )
        .unwrap();
        let p = cfg.params().unwrap();
        assert_eq!(p.s_m, 50.0);
        assert_eq!(p.leakage_ratio(), 0.5);
        assert!((p.k - 1.0 / 1763.5).abs() < 1e-18);
        assert!(
            serde_json::from_str::<NoiseConfig>(r#"{"S_m": 1, "L_m": 0, "bogus": 1}"#).is_err()
        );
    }

    #[test]
    fn dark_input_gives_zero() {
        let z = Frame::zeros(16, 16);
        let f = simulate_frame(&z, &z, None, &camera(50.0, 0.0), RngStream::new(0, 0, 0)).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let r = simulate_frame(
            &Frame::zeros(4, 4),
            &Frame::zeros(4, 5),
            None,
            &camera(10.0, 0.0),
            RngStream::new(0, 0, 0),
        );
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mean_and_variance_follow_photon_statistics() {
        let s = Frame::filled(320, 320, 0.5);
        let z = Frame::zeros(320, 320);
        let p = camera(50.0, 0.0);
        let f = simulate_frame(&s, &z, None, &p, RngStream::new(5, 0, 0)).unwrap();
        let n = f.len() as f64;
        let mean = f.mean();
        let var = f.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let step = 1.0 / 4096.0 / (p.k * p.s_m);
        let tol = 4.0 * (0.5 / (50.0 * n)).sqrt() + step;
        assert!((mean - 0.5).abs() < tol, "mean {mean}");
        assert!((var / 0.01 - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn read_noise_enters_before_quantization() {
        let s = Frame::zeros(4, 4);
        let r = Frame::filled(4, 4, 0.6);
        let p = camera(10.0, 0.0);
        let f = simulate_camera_frame(&s, &s, Some(&r), &p, RngStream::new(1, 1, 1)).unwrap();
        assert!(f.data().iter().all(|&v| v == quantize(0.1, 12)));
    }

    #[test]
    fn more_leakage_never_lowers_the_rate() {
        // With a shared stream, a larger rate yields a stochastically larger
        // draw on average; check the expected value.
        let s = Frame::filled(64, 64, 0.2);
        let l = Frame::filled(64, 64, 0.4);
        let lo = simulate_frame(&s, &l, None, &camera(40.0, 10.0), RngStream::new(2, 0, 0)).unwrap();
        let hi = simulate_frame(&s, &l, None, &camera(40.0, 30.0), RngStream::new(2, 0, 0)).unwrap();
        assert!(hi.mean() > lo.mean());
        assert!((lo.mean() - (0.2 + 0.25 * 0.4)).abs() < 0.01);
        assert!((hi.mean() - (0.2 + 0.75 * 0.4)).abs() < 0.01);
    }

    fn tiny_scene() -> Scene {
        let spec = SceneSpec {
            width: 24,
            height: 20,
            length: 6,
            ..SceneSpec::default()
        };
        generate_synthetic_scene(&spec, 4).unwrap()
    }

    #[test]
    fn sequence_is_deterministic_and_matches_frame_simulation() {
        let scene = tiny_scene();
        let p = camera(50.0, 0.0);
        let a = simulate_sequence(&scene, LeakageSource::Oracle, None, &p, 9).unwrap();
        let b = simulate_sequence(&scene, LeakageSource::Oracle, None, &p, 9).unwrap();
        assert_eq!(a, b);
        let id = rng::sequence_id(&scene.id);
        let f3 = simulate_frame(
            scene.clean.frame(3),
            scene.leakage.as_ref().unwrap().frame(3),
            None,
            &p,
            RngStream::new(9, id, 3),
        )
        .unwrap();
        assert_eq!(a.frame(3), &f3);
    }

    #[test]
    fn exact_predictor_reproduces_oracle_run() {
        let scene = tiny_scene();
        let p = camera(50.0, 25.0);
        let bank = ReadNoiseBank::procedural(
            &ProceduralBankSpec {
                width: 24,
                height: 20,
                length: 10,
                ..ProceduralBankSpec::default()
            },
            1,
        )
        .unwrap();
        let oracle = simulate_sequence(&scene, LeakageSource::Oracle, Some(&bank), &p, 4).unwrap();
        let pred = LeakagePredictor::Oracle;
        let via =
            simulate_sequence(&scene, LeakageSource::Predictor(&pred), Some(&bank), &p, 4).unwrap();
        assert_eq!(oracle, via);
    }

    #[test]
    fn short_bank_and_missing_leakage_fail() {
        let mut scene = tiny_scene();
        let p = camera(50.0, 25.0);
        let bank = ReadNoiseBank::new(vec![Frame::zeros(24, 20); 3], "short").unwrap();
        assert!(matches!(
            simulate_sequence(&scene, LeakageSource::Oracle, Some(&bank), &p, 0),
            Err(Error::BankTooShort { .. })
        ));
        scene.leakage = None;
        assert!(matches!(
            simulate_sequence(&scene, LeakageSource::Oracle, None, &p, 0),
            Err(Error::MissingChannel(_))
        ));
    }

    #[test]
    fn training_params_respect_ranges() {
        let mut rng = RngStream::new(12, 0, 0).rng();
        let mut inv_k_sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let p = sample_training_params(&mut rng);
            p.validate().unwrap();
            let inv_k = p.inv_k();
            assert!((1200.0..=2400.0 + 1e-9).contains(&inv_k));
            assert!(p.s_m >= 10.0 && p.s_m <= inv_k / 2.0 + 1e-9);
            assert!(p.l_m >= 0.0 && p.l_m <= p.s_m);
            assert!((4.0..=8.0).contains(&p.r_m));
            assert_eq!(p.bit_depth, 12);
            inv_k_sum += inv_k;
        }
        let mean = inv_k_sum / n as f64;
        // U[1200, 2400] has sd 346; 4 standard errors is ~14.
        assert!((mean - 1800.0).abs() < 50.0, "mean 1/K {mean}");

        let a = sample_training_params(&mut RngStream::new(1, 0, 0).rng());
        let b = sample_training_params(&mut RngStream::new(1, 0, 0).rng());
        assert_eq!(a, b);
    }
}
