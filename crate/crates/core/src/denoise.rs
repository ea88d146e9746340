//! Causal denoisers.
//!
//! The align-and-merge recursion keeps a motion-corrected running sum and a
//! per-pixel sample count. Each new frame warps both into alignment using
//! flow on the reference video, zeroes them where the reference warp error
//! flags an occlusion, and adds the new noisy frame. The running average is
//! then cleared of leakage and optionally smoothed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, FlowConfig};
use crate::frame::{ChannelTag, Frame, VideoSequence};
use crate::leakage::LeakagePredictor;
use crate::noise::NoiseParams;

pub const DEFAULT_N_MAX: f64 = 64.0;
pub const DEFAULT_TAU: f64 = 0.08;

/// Recursive motion-corrected sum and per-pixel effective count.
#[derive(Clone, Debug, PartialEq)]
pub struct AmState {
    sum: Frame,
    count: Frame,
    t: usize,
}

impl AmState {
    pub fn new(width: usize, height: usize) -> Self {
        AmState {
            sum: Frame::zeros(width, height),
            count: Frame::zeros(width, height),
            t: 0,
        }
    }

    pub fn sum(&self) -> &Frame {
        &self.sum
    }

    pub fn count(&self) -> &Frame {
        &self.count
    }

    /// Number of frames merged so far.
    pub fn t(&self) -> usize {
        self.t
    }

    /// `sum / count`, falling back to `current` where nothing has been
    /// accumulated.
    pub fn average(&self, current: &Frame) -> Result<Frame> {
        current.check_shape(&self.sum)?;
        let data = self
            .sum
            .data()
            .iter()
            .zip(self.count.data())
            .zip(current.data())
            .map(|((&s, &c), &f)| if c > 0.0 { s / c } else { f })
            .collect();
        Frame::from_vec(current.width(), current.height(), data)
    }
}

/// How much of the predicted leakage to remove from the merged frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageScale {
    Fixed(f64),
    /// `L_m / S_m` from the known noise parameters.
    Nominal,
    /// Least squares against the darkest quarter of the merged frame.
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoother {
    None,
    Gaussian(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Cap on the per-pixel effective count.
    pub n_max: f64,
    /// Occlusion threshold on the reference warp error.
    pub tau: f64,
    pub leakage_predictor: LeakagePredictor,
    pub leakage_scale: LeakageScale,
    pub spatial_smoother: Smoother,
    #[serde(default)]
    pub flow: FlowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_max: DEFAULT_N_MAX,
            tau: DEFAULT_TAU,
            leakage_predictor: LeakagePredictor::Oracle,
            leakage_scale: LeakageScale::Nominal,
            spatial_smoother: Smoother::None,
            flow: FlowConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_max.is_finite() && self.n_max >= 1.0) {
            return Err(Error::param(format!(
                "N_max must be at least 1, got {}",
                self.n_max
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::param(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if let Smoother::Gaussian(s) = self.spatial_smoother {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::param(format!(
                    "smoothing sigma must be non-negative, got {s}"
                )));
            }
        }
        if let LeakageScale::Fixed(b) = self.leakage_scale {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::param(format!(
                    "leakage scale must be non-negative, got {b}"
                )));
            }
        }
        self.leakage_predictor.validate()?;
        self.flow.validate()
    }
}

/// Advances the merge by one frame and returns the merged average.
///
/// The first frame initialises the state with count one. Later frames warp
/// the state with flow from `prev_ref` to `cur_ref`, drop it where the
/// occlusion mask is zero, and add `noisy`. Counts above `n_max` are
/// rescaled together with the sum so the average stays a weighted mean.
pub fn am_update(
    state: &mut AmState,
    noisy: &Frame,
    prev_ref: &Frame,
    cur_ref: &Frame,
    cfg: &PipelineConfig,
) -> Result<Frame> {
    noisy.check_shape(&state.sum)?;
    noisy.check_shape(prev_ref)?;
    noisy.check_shape(cur_ref)?;

    if state.t == 0 {
        state.sum = noisy.clone();
        state.count = Frame::filled(noisy.width(), noisy.height(), 1.0);
    } else {
        let flow = flow::estimate_flow_with(prev_ref, cur_ref, &cfg.flow)?;
        let mask = flow::occlusion_mask(prev_ref, cur_ref, &flow, cfg.tau)?;
        let (sum, count) = if flow.is_zero() {
            (state.sum.clone(), state.count.clone())
        } else {
            (
                flow::warp(&state.sum, &flow)?,
                flow::warp(&state.count, &flow)?,
            )
        };
        let keep = cfg.n_max - 1.0;
        let mut new_sum = Frame::zeros(noisy.width(), noisy.height());
        let mut new_count = Frame::zeros(noisy.width(), noisy.height());
        for i in 0..noisy.len() {
            let m = mask.mask.data()[i];
            let (mut s, mut c) = (m * sum.data()[i], m * count.data()[i]);
            if c > keep {
                s *= keep / c;
                c = keep;
            }
            new_sum.data_mut()[i] = s + noisy.data()[i];
            new_count.data_mut()[i] = c + 1.0;
        }
        state.sum = new_sum;
        state.count = new_count;
    }
    state.t += 1;
    state.average(noisy)
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * q).round() as usize;
    v[idx]
}

/// Leakage scale fitted on the darkest quarter of `a_m`, where fluorescence
/// is presumed absent: least squares through the origin, then two L1
/// reweighting passes.
pub fn estimate_leakage_scale(a_m: &Frame, predicted: &Frame) -> Result<f64> {
    a_m.check_shape(predicted)?;
    if predicted.data().iter().all(|&p| p == 0.0) {
        return Ok(0.0);
    }
    let threshold = percentile(a_m.data(), 0.25);
    let (a, p): (Vec<f64>, Vec<f64>) = a_m
        .data()
        .iter()
        .zip(predicted.data())
        .filter(|(&a, _)| a <= threshold)
        .map(|(&a, &p)| (a, p))
        .unzip();

    let mut weights = vec![1.0; a.len()];
    let mut beta = 0.0;
    for pass in 0..3 {
        let (mut num, mut den) = (0.0, 0.0);
        for ((&w, &ai), &pi) in weights.iter().zip(&a).zip(&p) {
            num += w * ai * pi;
            den += w * pi * pi;
        }
        if den <= 0.0 {
            return Ok(0.0);
        }
        beta = num / den;
        if pass < 2 {
            for ((w, &ai), &pi) in weights.iter_mut().zip(&a).zip(&p) {
                *w = 1.0 / (ai - beta * pi).abs().max(1e-6);
            }
        }
    }
    Ok(beta.max(0.0))
}

/// Removes `beta * predicted_leakage` from the merged frame and clamps at
/// zero. Returns the frame and the scale used.
pub fn subtract_leakage(
    a_m: &Frame,
    predicted_leakage: &Frame,
    mode: LeakageScale,
    params: Option<&NoiseParams>,
) -> Result<(Frame, f64)> {
    a_m.check_shape(predicted_leakage)?;
    let beta = match mode {
        LeakageScale::Fixed(b) => b,
        LeakageScale::Nominal => params
            .ok_or_else(|| Error::param("nominal leakage scale needs the noise parameters"))?
            .leakage_ratio(),
        LeakageScale::Estimated => estimate_leakage_scale(a_m, predicted_leakage)?,
    };
    let out = a_m.zip_map(predicted_leakage, |a, p| (a - beta * p).max(0.0))?;
    Ok((out, beta))
}

/// Separable Gaussian blur with clamped borders; `sigma = 0` is the
/// identity.
pub fn gaussian_smooth(frame: &Frame, sigma: f64) -> Frame {
    if sigma <= 0.0 {
        return frame.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = frame.shape();
    let horiz = Frame::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &wt)| wt * frame.get_clamped(x as isize + k as isize - radius, y as isize))
            .sum()
    });
    Frame::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &wt)| wt * horiz.get_clamped(x as isize, y as isize + k as isize - radius))
            .sum()
    })
}

/// Streaming align-and-merge denoiser: frames go in one at a time and each
/// output is returned before the next input is seen.
#[derive(Clone, Debug)]
pub struct CausalPipeline {
    cfg: PipelineConfig,
    params: Option<NoiseParams>,
    state: Option<AmState>,
    prev_ref: Option<Frame>,
    last_beta: f64,
}

impl CausalPipeline {
    pub fn new(cfg: PipelineConfig, params: Option<NoiseParams>) -> Result<Self> {
        cfg.validate()?;
        if let Some(p) = &params {
            p.validate()?;
        }
        if cfg.leakage_scale == LeakageScale::Nominal && params.is_none() {
            return Err(Error::param(
                "nominal leakage scale needs the noise parameters",
            ));
        }
        Ok(CausalPipeline {
            cfg,
            params,
            state: None,
            prev_ref: None,
            last_beta: 0.0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&AmState> {
        self.state.as_ref()
    }

    /// Leakage scale applied to the most recent frame.
    pub fn last_beta(&self) -> f64 {
        self.last_beta
    }

    pub fn push(
        &mut self,
        noisy: &Frame,
        reference: &Frame,
        oracle_leakage: Option<&Frame>,
    ) -> Result<Frame> {
        noisy.check_shape(reference)?;
        let state = self
            .state
            .get_or_insert_with(|| AmState::new(noisy.width(), noisy.height()));
        let prev = self.prev_ref.as_ref().unwrap_or(reference);
        let a_m = am_update(state, noisy, prev, reference, &self.cfg)?;
        self.prev_ref = Some(reference.clone());

        let predicted = self
            .cfg
            .leakage_predictor
            .predict(reference, oracle_leakage)?;
        let (clean, beta) = subtract_leakage(
            &a_m,
            &predicted,
            self.cfg.leakage_scale,
            self.params.as_ref(),
        )?;
        self.last_beta = beta;
        Ok(match self.cfg.spatial_smoother {
            Smoother::None => clean,
            Smoother::Gaussian(sigma) => gaussian_smooth(&clean, sigma),
        })
    }
}

/// Runs the align-and-merge pipeline over whole sequences in temporal
/// order. Output frame `t` depends only on inputs `0..=t`.
pub fn run_causal(
    noisy: &VideoSequence,
    reference: &VideoSequence,
    oracle_leakage: Option<&VideoSequence>,
    cfg: &PipelineConfig,
    params: Option<&NoiseParams>,
) -> Result<VideoSequence> {
    noisy.check_compatible(reference)?;
    if let Some(l) = oracle_leakage {
        noisy.check_compatible(l)?;
    }
    let mut pipeline = CausalPipeline::new(cfg.clone(), params.copied())?;
    let frames = (0..noisy.len())
        .map(|t| {
            pipeline.push(
                noisy.frame(t),
                reference.frame(t),
                oracle_leakage.map(|l| l.frame(t)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, noisy.fps(), ChannelTag::Denoised)
}

/// Causal boxcar mean over the trailing `window` frames; the window is
/// shorter at the start of the sequence.
pub fn temporal_average_baseline(noisy: &VideoSequence, window: usize) -> Result<VideoSequence> {
    if window == 0 {
        return Err(Error::param("temporal window must be at least 1"));
    }
    let (w, h) = noisy.shape();
    let frames = (0..noisy.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let n = (t + 1 - lo) as f64;
            let mut acc = Frame::zeros(w, h);
            for f in &noisy.frames()[lo..=t] {
                for (a, &v) in acc.data_mut().iter_mut().zip(f.data()) {
                    *a += v;
                }
            }
            acc.data_mut().iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    VideoSequence::new(frames, noisy.fps(), ChannelTag::Denoised)
}

/// Everything a denoiser may look at for one sequence.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseInput<'a> {
    pub noisy: &'a VideoSequence,
    pub reference: &'a VideoSequence,
    pub oracle_leakage: Option<&'a VideoSequence>,
    pub params: Option<&'a NoiseParams>,
}

/// A causal video denoiser usable in sweeps and experiments.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> String;
    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<VideoSequence>;
}

/// Returns the noisy video unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<VideoSequence> {
        Ok(input.noisy.clone().with_tag(ChannelTag::Denoised))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TemporalAverage {
    pub window: usize,
}

impl Denoiser for TemporalAverage {
    fn name(&self) -> String {
        format!("temporal_average_{}", self.window)
    }

    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<VideoSequence> {
        temporal_average_baseline(input.noisy, self.window)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AlignAndMerge {
    pub cfg: PipelineConfig,
}

impl AlignAndMerge {
    pub fn new(cfg: PipelineConfig) -> Self {
        AlignAndMerge { cfg }
    }
}

impl Denoiser for AlignAndMerge {
    fn name(&self) -> String {
        "align_and_merge".into()
    }

    fn denoise(&self, input: &DenoiseInput<'_>) -> Result<VideoSequence> {
        run_causal(
            input.noisy,
            input.reference,
            input.oracle_leakage,
            &self.cfg,
            input.params,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_poisson, NoiseParams};
    use crate::rng::RngStream;

    fn textured(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (x * 0.21 + y * 0.05).sin() + 0.2 * (y * 0.17 - x * 0.08).cos()
        })
    }

    fn seq(frames: Vec<Frame>, tag: ChannelTag) -> VideoSequence {
        VideoSequence::new(frames, 30.0, tag).unwrap()
    }

    fn plain_cfg() -> PipelineConfig {
        PipelineConfig {
            leakage_predictor: LeakagePredictor::zero(),
            leakage_scale: LeakageScale::Fixed(0.0),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn first_frame_passes_through() {
        let r = textured(32, 32);
        let f = Frame::from_fn(32, 32, |x, y| ((x * y) % 7) as f64 / 7.0);
        let mut state = AmState::new(32, 32);
        let a = am_update(&mut state, &f, &r, &r, &plain_cfg()).unwrap();
        assert_eq!(a, f);
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn static_scene_is_arithmetic_mean() {
        let r = textured(32, 32);
        let frames: Vec<Frame> = (0..10)
            .map(|t| Frame::from_fn(32, 32, |x, y| ((x * 3 + y * 5 + t * 11) % 17) as f64 / 16.0))
            .collect();
        let mut state = AmState::new(32, 32);
        let mut last = None;
        for f in &frames {
            last = Some(am_update(&mut state, f, &r, &r, &plain_cfg()).unwrap());
        }
        let a = last.unwrap();
        for i in 0..a.len() {
            let mean = frames.iter().map(|f| f.data()[i]).sum::<f64>() / 10.0;
            assert!((a.data()[i] - mean).abs() < 1e-14);
        }
        assert!(state.count().data().iter().all(|&c| c == 10.0));
    }

    #[test]
    fn static_poisson_variance_drops_by_n() {
        let (w, h, n) = (100, 100, 16);
        let r = textured(w, h);
        let lambda = 25.0 * 0.5;
        let mut state = AmState::new(w, h);
        let mut single = None;
        let mut merged = None;
        for t in 0..n {
            let mut rng = RngStream::new(8, 0, t).rng();
            let f = Frame::from_fn(w, h, |_, _| sample_poisson(&mut rng, lambda) as f64 / 25.0);
            if t == 0 {
                single = Some(f.clone());
            }
            merged = Some(am_update(&mut state, &f, &r, &r, &plain_cfg()).unwrap());
        }
        let var = |f: &Frame| {
            let m = f.mean();
            f.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (f.len() - 1) as f64
        };
        let ratio = var(&single.unwrap()) / var(&merged.unwrap());
        assert!((ratio / n as f64 - 1.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn occluded_pixels_reset_to_current_frame() {
        let r0 = textured(32, 32);
        let mut r1 = r0.clone();
        for y in 10..20 {
            for x in 10..20 {
                // A saturated occluder no part of the texture can match.
                r1.set(x, y, 1.0);
            }
        }
        let mut state = AmState::new(32, 32);
        am_update(
            &mut state,
            &Frame::filled(32, 32, 0.2),
            &r0,
            &r0,
            &plain_cfg(),
        )
        .unwrap();
        am_update(
            &mut state,
            &Frame::filled(32, 32, 0.4),
            &r0,
            &r0,
            &plain_cfg(),
        )
        .unwrap();
        let f = Frame::filled(32, 32, 0.9);
        let a = am_update(&mut state, &f, &r0, &r1, &plain_cfg()).unwrap();
        for y in 12..18 {
            for x in 12..18 {
                assert_eq!(state.count().get(x, y), 1.0);
                assert_eq!(a.get(x, y), 0.9);
            }
        }
    }

    #[test]
    fn count_is_capped() {
        let r = textured(16, 16);
        let cfg = PipelineConfig {
            n_max: 4.0,
            ..plain_cfg()
        };
        let mut state = AmState::new(16, 16);
        let mut a = Frame::zeros(16, 16);
        for t in 0..12 {
            a = am_update(
                &mut state,
                &Frame::filled(16, 16, t as f64 * 0.01),
                &r,
                &r,
                &cfg,
            )
            .unwrap();
            assert!(state.count().data().iter().all(|&c| c <= 4.0));
        }
        // Average stays inside the range of the inputs.
        assert!(a.data().iter().all(|&v| (0.0..=0.11).contains(&v)));
        assert!(a.get(3, 3) > 0.08);
    }

    #[test]
    fn subtract_examples() {
        let a = Frame::from_fn(8, 8, |x, _| x as f64 / 10.0);
        let zero = Frame::zeros(8, 8);
        let (out, _) = subtract_leakage(&a, &zero, LeakageScale::Estimated, None).unwrap();
        assert_eq!(out, a);

        let s = Frame::from_fn(8, 8, |x, y| if x == y { 0.7 } else { 0.1 });
        let p = Frame::from_fn(8, 8, |x, y| (x + y) as f64 / 16.0);
        let mixed = s.zip_map(&p, |s, p| s + 0.3 * p).unwrap();
        let (out, beta) = subtract_leakage(&mixed, &p, LeakageScale::Fixed(0.3), None).unwrap();
        assert_eq!(beta, 0.3);
        for (o, e) in out.data().iter().zip(s.data()) {
            assert!((o - e).abs() < 1e-12);
        }

        let params = NoiseParams::paper_test(50.0, 25.0).unwrap();
        let (_, beta) = subtract_leakage(&mixed, &p, LeakageScale::Nominal, Some(&params)).unwrap();
        assert_eq!(beta, 0.5);
        assert!(subtract_leakage(&mixed, &p, LeakageScale::Nominal, None).is_err());
    }

    #[test]
    fn subtraction_clamps_at_zero() {
        let a = Frame::filled(4, 4, 0.1);
        let p = Frame::filled(4, 4, 1.0);
        let (out, _) = subtract_leakage(&a, &p, LeakageScale::Fixed(0.5), None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn estimated_scale_ignores_fluorescence() {
        let (w, h) = (64, 64);
        let p = Frame::from_fn(w, h, |x, y| {
            0.2 + 0.6 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos()).abs()
        });
        let blobs = Frame::from_fn(w, h, |x, y| {
            let d2 = |cx: f64, cy: f64| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            0.8 * (-d2(20.0, 20.0) / 40.0).exp() + 0.6 * (-d2(45.0, 40.0) / 30.0).exp()
        });
        let a = p.zip_map(&blobs, |p, b| 0.4 * p + b).unwrap();
        let beta = estimate_leakage_scale(&a, &p).unwrap();
        // Oracle: least squares through the origin on blob-free pixels
        // is exactly 0.4.
        assert!((beta - 0.4).abs() < 0.05, "beta {beta}");
    }

    #[test]
    fn gaussian_smoothing_preserves_constants() {
        let f = Frame::filled(12, 9, 0.37);
        let g = gaussian_smooth(&f, 1.5);
        assert!(g.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        assert_eq!(gaussian_smooth(&textured(8, 8), 0.0), textured(8, 8));
    }

    #[test]
    fn length_one_video_is_leakage_subtracted_input() {
        let r = textured(16, 16);
        let noisy = Frame::filled(16, 16, 0.6);
        let leak = Frame::filled(16, 16, 0.4);
        let params = NoiseParams::paper_test(50.0, 25.0).unwrap();
        let out = run_causal(
            &seq(vec![noisy.clone()], ChannelTag::NoisyFv),
            &seq(vec![r], ChannelTag::Reference),
            Some(&seq(vec![leak.clone()], ChannelTag::Leakage)),
            &PipelineConfig::default(),
            Some(&params),
        )
        .unwrap();
        let (expected, _) =
            subtract_leakage(&noisy, &leak, LeakageScale::Nominal, Some(&params)).unwrap();
        assert_eq!(out.frame(0), &expected);
    }

    #[test]
    fn run_causal_rejects_length_mismatch() {
        let a = seq(vec![Frame::zeros(16, 16); 3], ChannelTag::NoisyFv);
        let b = seq(vec![Frame::zeros(16, 16); 2], ChannelTag::Reference);
        assert!(matches!(
            run_causal(&a, &b, None, &plain_cfg(), None),
            Err(Error::LengthMismatch(3, 2))
        ));
    }

    #[test]
    fn boxcar_examples() {
        let frames: Vec<Frame> = (0..5).map(|t| Frame::filled(4, 4, t as f64)).collect();
        let s = seq(frames, ChannelTag::NoisyFv);
        let id = temporal_average_baseline(&s, 1).unwrap();
        assert_eq!(id.frames(), s.frames());
        let avg = temporal_average_baseline(&s, 3).unwrap();
        assert_eq!(avg.frame(0).get(0, 0), 0.0);
        assert_eq!(avg.frame(1).get(0, 0), 0.5);
        assert_eq!(avg.frame(4).get(0, 0), 3.0);

        let c = seq(vec![Frame::filled(4, 4, 0.3); 6], ChannelTag::NoisyFv);
        for window in [1, 2, 5, 9] {
            let out = temporal_average_baseline(&c, window).unwrap();
            assert!(out
                .iter()
                .all(|f| f.data().iter().all(|&v| (v - 0.3).abs() < 1e-15)));
        }
        assert!(temporal_average_baseline(&c, 0).is_err());
    }

    #[test]
    fn boxcar_variance_reduction() {
        let (w, h) = (100, 100);
        let frames: Vec<Frame> = (0..9)
            .map(|t| {
                let mut rng = RngStream::new(4, 1, t).rng();
                Frame::from_fn(w, h, |_, _| sample_poisson(&mut rng, 20.0) as f64 / 20.0)
            })
            .collect();
        let s = seq(frames, ChannelTag::NoisyFv);
        let out = temporal_average_baseline(&s, 9).unwrap();
        let var = |f: &Frame| {
            let m = f.mean();
            f.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (f.len() - 1) as f64
        };
        let ratio = var(s.frame(0)) / var(out.frame(8));
        assert!((ratio / 9.0 - 1.0).abs() < 0.15, "ratio {ratio}");
    }
}
