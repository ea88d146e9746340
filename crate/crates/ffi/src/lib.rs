//! C ABI for the fgsim toolkit.
//!
//! Sequences and leakage predictors cross the boundary as opaque handles
//! that the caller releases with the matching `_free` function. Every
//! fallible call returns an [`FgsimStatus`]; on failure the message is
//! available from [`fgsim_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fgsim::denoise::{run_causal, LeakageScale, PipelineConfig, Smoother};
use fgsim::frameio::{
    generate_synthetic_scene, load_sequence, save_sequence, FrameFormat, Scene, SceneSpec,
};
use fgsim::leakage::{fit_predictor, LeakagePredictor, PredictorKind};
use fgsim::noise::{simulate_sequence, LeakageSource, NoiseParams, ReadNoiseBank};
use fgsim::{calib, metrics, noise, ChannelTag, Error, Frame, VideoSequence};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    ShapeMismatch = 4,
    Degenerate = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgsimChannel {
    FluorescenceClean = 0,
    Reference = 1,
    Leakage = 2,
    ReadNoise = 3,
    NoisyFv = 4,
    Denoised = 5,
}

impl From<FgsimChannel> for ChannelTag {
    fn from(c: FgsimChannel) -> Self {
        match c {
            FgsimChannel::FluorescenceClean => ChannelTag::FluorescenceClean,
            FgsimChannel::Reference => ChannelTag::Reference,
            FgsimChannel::Leakage => ChannelTag::Leakage,
            FgsimChannel::ReadNoise => ChannelTag::ReadNoise,
            FgsimChannel::NoisyFv => ChannelTag::NoisyFv,
            FgsimChannel::Denoised => ChannelTag::Denoised,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgsimFormat {
    Png16 = 0,
    RawF32 = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgsimPredictorKind {
    Oracle = 0,
    Affine = 1,
    PatchAffine = 2,
}

/// How the merged frame's leakage is scaled before subtraction.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgsimBetaMode {
    Fixed = 0,
    /// `L_m / S_m` from the noise parameters.
    Nominal = 1,
    Estimated = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgsimNoiseParams {
    pub s_m: f64,
    pub l_m: f64,
    pub r_m: f64,
    pub inv_k: f64,
    pub bit_depth: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgsimPipelineParams {
    pub n_max: f64,
    pub tau: f64,
    pub beta_mode: FgsimBetaMode,
    /// Used when `beta_mode` is `Fixed`.
    pub beta: f64,
    /// Gaussian smoothing after subtraction; 0 disables it.
    pub smooth_sigma: f64,
}

/// Opaque video handle.
pub struct FgsimSequence(VideoSequence);

/// Opaque leakage predictor handle.
pub struct FgsimPredictor(LeakagePredictor);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FgsimStatus {
    match e {
        Error::Io { .. } | Error::Format { .. } => FgsimStatus::Io,
        Error::ShapeMismatch { .. } | Error::LengthMismatch(..) => FgsimStatus::ShapeMismatch,
        Error::Degenerate(_) => FgsimStatus::Degenerate,
        _ => FgsimStatus::InvalidArgument,
    }
}

struct Fail(FgsimStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FgsimStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FgsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgsimStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            FgsimStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(FgsimStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn params_of(p: &FgsimNoiseParams) -> Result<NoiseParams, Fail> {
    if !(p.inv_k.is_finite() && p.inv_k >= 1.0) {
        return Err(Fail(
            FgsimStatus::InvalidArgument,
            format!("inv_k must be at least 1, got {}", p.inv_k),
        ));
    }
    Ok(NoiseParams::new(
        p.s_m,
        p.l_m,
        p.r_m,
        1.0 / p.inv_k,
        p.bit_depth,
    )?)
}

/// Message of the last failure on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fgsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fgsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Calibrated camera defaults (`1/K = 1763.5`, `R_m = 6`, 12 bits).
#[no_mangle]
pub extern "C" fn fgsim_noise_params_paper_test(s_m: f64, l_m: f64) -> FgsimNoiseParams {
    FgsimNoiseParams {
        s_m,
        l_m,
        r_m: noise::PAPER_TEST_R_M,
        inv_k: noise::PAPER_TEST_INV_K,
        bit_depth: noise::DEFAULT_BIT_DEPTH,
    }
}

/// Default align-and-merge settings: `N_max = 64`, `tau = 0.08`, nominal
/// leakage scale, no smoothing.
#[no_mangle]
pub extern "C" fn fgsim_pipeline_params_default() -> FgsimPipelineParams {
    FgsimPipelineParams {
        n_max: fgsim::denoise::DEFAULT_N_MAX,
        tau: fgsim::denoise::DEFAULT_TAU,
        beta_mode: FgsimBetaMode::Nominal,
        beta: 0.0,
        smooth_sigma: 0.0,
    }
}

#[no_mangle]
pub extern "C" fn fgsim_quantize(x: f64, bit_depth: u32) -> f64 {
    noise::quantize(x, bit_depth.clamp(1, 30))
}

/// Builds a sequence from `frames * height * width` row-major values.
///
/// # Safety
/// `data` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_sequence_new(
    data: *const f64,
    width: usize,
    height: usize,
    frames: usize,
    fps: f64,
    channel: FgsimChannel,
    out: *mut *mut FgsimSequence,
) -> FgsimStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .filter(|&n| n > 0 && frames > 0)
            .ok_or_else(|| Fail(FgsimStatus::InvalidArgument, "empty sequence".into()))?;
        let all = std::slice::from_raw_parts(data, n * frames);
        let fr = all
            .chunks_exact(n)
            .map(|c| Frame::from_vec(width, height, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        put(
            out,
            FgsimSequence(VideoSequence::new(fr, fps, channel.into())?),
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_sequence_load(
    path: *const c_char,
    channel: FgsimChannel,
    out: *mut *mut FgsimSequence,
) -> FgsimStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, FgsimSequence(load_sequence(p, channel.into())?))
    })
}

/// # Safety
/// `seq` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fgsim_sequence_save(
    seq: *const FgsimSequence,
    dir: *const c_char,
    format: FgsimFormat,
) -> FgsimStatus {
    guard(|| {
        let s = borrow(seq, "seq")?;
        let d = path_arg(dir, "dir")?;
        let f = match format {
            FgsimFormat::Png16 => FrameFormat::Png16,
            FgsimFormat::RawF32 => FrameFormat::RawF32,
        };
        Ok(save_sequence(&s.0, d, f)?)
    })
}

/// # Safety
/// `seq` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgsim_sequence_free(seq: *mut FgsimSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// # Safety
/// `seq` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_sequence_dims(
    seq: *const FgsimSequence,
    width: *mut usize,
    height: *mut usize,
    frames: *mut usize,
) -> FgsimStatus {
    guard(|| {
        let s = borrow(seq, "seq")?;
        if width.is_null() || height.is_null() || frames.is_null() {
            return Err(null("output pointer"));
        }
        *width = s.0.width();
        *height = s.0.height();
        *frames = s.0.len();
        Ok(())
    })
}

/// Copies frame `t` into `out`, which holds `len >= width * height` values.
///
/// # Safety
/// `seq` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fgsim_sequence_copy_frame(
    seq: *const FgsimSequence,
    t: usize,
    out: *mut f64,
    len: usize,
) -> FgsimStatus {
    guard(|| {
        let s = borrow(seq, "seq")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if t >= s.0.len() {
            return Err(Fail(
                FgsimStatus::InvalidArgument,
                format!("frame {t} out of range"),
            ));
        }
        let src = s.0.frame(t).data();
        if len < src.len() {
            return Err(Fail(
                FgsimStatus::InvalidArgument,
                format!("buffer of {len} values, frame needs {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
        Ok(())
    })
}

/// Generates a synthetic scene with default motion and content.
///
/// # Safety
/// The three output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_synth_scene(
    width: usize,
    height: usize,
    length: usize,
    seed: u64,
    clean: *mut *mut FgsimSequence,
    reference: *mut *mut FgsimSequence,
    leakage: *mut *mut FgsimSequence,
) -> FgsimStatus {
    guard(|| {
        if clean.is_null() || reference.is_null() || leakage.is_null() {
            return Err(null("output pointer"));
        }
        let spec = SceneSpec {
            width,
            height,
            length,
            ..SceneSpec::default()
        };
        let scene = generate_synthetic_scene(&spec, seed)?;
        let l = scene
            .leakage
            .ok_or_else(|| Fail(FgsimStatus::InvalidArgument, "no leakage".into()))?;
        put(clean, FgsimSequence(scene.clean))?;
        put(reference, FgsimSequence(scene.reference))?;
        put(leakage, FgsimSequence(l))
    })
}

/// Simulates a noisy fluorescence video. `predictor` of null uses
/// `leakage` directly; `dark` of null disables read noise.
///
/// # Safety
/// Handles must be live or null where allowed; `params` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fgsim_simulate(
    clean: *const FgsimSequence,
    reference: *const FgsimSequence,
    leakage: *const FgsimSequence,
    predictor: *const FgsimPredictor,
    dark: *const FgsimSequence,
    params: *const FgsimNoiseParams,
    seed: u64,
    out: *mut *mut FgsimSequence,
) -> FgsimStatus {
    guard(|| {
        let c = borrow(clean, "clean")?;
        let r = borrow(reference, "reference")?;
        let p = params_of(borrow(params, "params")?)?;
        let l = leakage.as_ref().map(|l| l.0.clone());
        let scene = Scene::new("ffi", c.0.clone(), r.0.clone(), l)?;
        let bank = match dark.as_ref() {
            Some(d) => Some(ReadNoiseBank::from_sequence(d.0.clone(), "ffi")?),
            None => None,
        };
        let source = match predictor.as_ref() {
            Some(pr) => LeakageSource::Predictor(&pr.0),
            None => LeakageSource::Oracle,
        };
        let noisy = simulate_sequence(&scene, source, bank.as_ref(), &p, seed)?;
        put(out, FgsimSequence(noisy))
    })
}

/// Runs the causal align-and-merge denoiser. A null `predictor` uses the
/// oracle (which then needs `oracle_leakage`); `noise` is needed for the
/// nominal leakage scale.
///
/// # Safety
/// Handles must be live or null where allowed; `pipeline` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fgsim_denoise(
    noisy: *const FgsimSequence,
    reference: *const FgsimSequence,
    oracle_leakage: *const FgsimSequence,
    predictor: *const FgsimPredictor,
    pipeline: *const FgsimPipelineParams,
    noise: *const FgsimNoiseParams,
    out: *mut *mut FgsimSequence,
) -> FgsimStatus {
    guard(|| {
        let n = borrow(noisy, "noisy")?;
        let r = borrow(reference, "reference")?;
        let pp = borrow(pipeline, "pipeline")?;
        let params = noise.as_ref().map(params_of).transpose()?;
        let cfg = PipelineConfig {
            n_max: pp.n_max,
            tau: pp.tau,
            leakage_predictor: predictor
                .as_ref()
                .map_or(LeakagePredictor::Oracle, |p| p.0.clone()),
            leakage_scale: match pp.beta_mode {
                FgsimBetaMode::Fixed => LeakageScale::Fixed(pp.beta),
                FgsimBetaMode::Nominal => LeakageScale::Nominal,
                FgsimBetaMode::Estimated => LeakageScale::Estimated,
            },
            spatial_smoother: if pp.smooth_sigma > 0.0 {
                Smoother::Gaussian(pp.smooth_sigma)
            } else {
                Smoother::None
            },
            ..PipelineConfig::default()
        };
        let oracle = oracle_leakage.as_ref().map(|o| &o.0);
        let d = run_causal(&n.0, &r.0, oracle, &cfg, params.as_ref())?;
        put(out, FgsimSequence(d))
    })
}

/// PSNR over the pooled sequence, capped at 100 dB.
///
/// # Safety
/// Both handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_psnr(
    a: *const FgsimSequence,
    b: *const FgsimSequence,
    out: *mut f64,
) -> FgsimStatus {
    guard(|| {
        let (a, b) = (borrow(a, "a")?, borrow(b, "b")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = metrics::psnr_sequence(&a.0, &b.0)?;
        Ok(())
    })
}

/// Mean per-frame SSIM.
///
/// # Safety
/// Both handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_ssim(
    a: *const FgsimSequence,
    b: *const FgsimSequence,
    out: *mut f64,
) -> FgsimStatus {
    guard(|| {
        let (a, b) = (borrow(a, "a")?, borrow(b, "b")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = metrics::ssim_sequence(&a.0, &b.0)?;
        Ok(())
    })
}

/// Gain from phantom video. `mask` holds `width * height` values where
/// non-zero marks ROI pixels; null means the whole frame.
///
/// # Safety
/// `video` must be live, `mask` null or readable, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_estimate_gain(
    video: *const FgsimSequence,
    mask: *const f64,
    k_mean: *mut f64,
    roi_count: *mut usize,
) -> FgsimStatus {
    guard(|| {
        let v = borrow(video, "video")?;
        if k_mean.is_null() || roi_count.is_null() {
            return Err(null("output pointer"));
        }
        let (w, h) = v.0.shape();
        let m = if mask.is_null() {
            Frame::filled(w, h, 1.0)
        } else {
            let src = std::slice::from_raw_parts(mask, w * h);
            Frame::from_vec(
                w,
                h,
                src.iter().map(|&x| f64::from(u8::from(x != 0.0))).collect(),
            )?
        };
        let g = calib::estimate_gain(&v.0, &m)?;
        *k_mean = g.k_mean;
        *roi_count = g.roi_count;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_predictor_load(
    path: *const c_char,
    out: *mut *mut FgsimPredictor,
) -> FgsimStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, FgsimPredictor(LeakagePredictor::load(p)?))
    })
}

/// # Safety
/// `pred` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fgsim_predictor_save(
    pred: *const FgsimPredictor,
    path: *const c_char,
) -> FgsimStatus {
    guard(|| {
        let pr = borrow(pred, "pred")?;
        let p = path_arg(path, "path")?;
        Ok(pr.0.save(p)?)
    })
}

/// Fits a predictor to the frame pairs of two equally long sequences.
///
/// # Safety
/// Both handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fgsim_predictor_fit(
    reference: *const FgsimSequence,
    leakage: *const FgsimSequence,
    kind: FgsimPredictorKind,
    out: *mut *mut FgsimPredictor,
) -> FgsimStatus {
    guard(|| {
        let r = borrow(reference, "reference")?;
        let l = borrow(leakage, "leakage")?;
        r.0.check_compatible(&l.0)?;
        let pairs: Vec<(Frame, Frame)> = r.0.iter().cloned().zip(l.0.iter().cloned()).collect();
        let k = match kind {
            FgsimPredictorKind::Oracle => PredictorKind::Oracle,
            FgsimPredictorKind::Affine => PredictorKind::Affine,
            FgsimPredictorKind::PatchAffine => PredictorKind::PatchAffine,
        };
        put(out, FgsimPredictor(fit_predictor(&pairs, k)?))
    })
}

/// # Safety
/// `pred` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgsim_predictor_free(pred: *mut FgsimPredictor) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}
