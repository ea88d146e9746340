//! The `fgsim` command line.
//!
//! Every subcommand resolves its configuration in three layers: built-in
//! defaults, an optional `--config` JSON file (unknown keys rejected), then
//! explicit flags. `--profile paper-test` pins the calibrated camera after
//! the file and before the flags. The resolved configuration is validated
//! and printed to stdout as one JSON line before any output is written.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calib::{estimate_gain, load_rois, roi_mask, GainReport};
use crate::denoise::{
    run_causal, AlignAndMerge, Denoiser, Identity, LeakageScale, PipelineConfig, Smoother,
    TemporalAverage, DEFAULT_N_MAX, DEFAULT_TAU,
};
use crate::error::Error;
use crate::experiment::{repeat_frames_experiment, DEFAULT_REPEATS};
use crate::frame::{ChannelTag, VideoSequence};
use crate::frameio::{
    generate_synthetic_scene, load_sequence, save_sequence, DatasetManifest, FrameFormat,
    ManifestEntry, ReferenceTexture, Scene, SceneSpec,
};
use crate::leakage::{fit_predictor, LeakagePredictor, PredictorKind};
use crate::metrics::sweep::{DEFAULT_RATIO_VALUES, DEFAULT_S_VALUES};
use crate::metrics::{evaluate, run_sweep, SweepSpec};
use crate::noise::{
    simulate_sequence, LeakageSource, NoiseConfig, NoiseParams, ProceduralBankSpec, ReadNoiseBank,
    DEFAULT_BIT_DEPTH, PAPER_TEST_INV_K, PAPER_TEST_R_M,
};

pub const CONFIG_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const THREADS_ENV: &str = "FGSIM_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Format { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "fgsim",
    version,
    about = "Fluorescence video noise simulation and causal denoising"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene and its manifest.
    Synth(SynthArgs),
    /// Simulate a noisy fluorescence video from a manifest entry.
    Simulate(SimulateArgs),
    /// Estimate the camera gain from phantom video.
    Calibrate(CalibrateArgs),
    /// Fit a leakage predictor to reference/leakage pairs.
    FitLll(FitLllArgs),
    /// Run the causal align-and-merge denoiser.
    Denoise(DenoiseArgs),
    /// Score a video against ground truth with PSNR and SSIM.
    Evaluate(EvaluateArgs),
    /// Sweep signal and leakage levels over a set of denoisers.
    Sweep(SweepArgs),
    /// Repeated-first-frame convergence experiment.
    RepeatFrames(RepeatFramesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// 1/K = 1763.5, R_m = 6, 12-bit quantization.
    PaperTest,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON file with configuration keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
}

#[derive(Args, Debug, Serialize)]
pub struct CameraFlags {
    #[arg(long = "rm")]
    #[serde(rename = "R_m", skip_serializing_if = "Option::is_none")]
    pub r_m: Option<f64>,
    #[arg(long = "inv-k")]
    #[serde(rename = "inv_K", skip_serializing_if = "Option::is_none")]
    pub inv_k: Option<f64>,
    #[arg(long = "bit-depth")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bit_depth: Option<u32>,
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Output directory; receives manifest.json and one directory per channel.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blobs: Option<usize>,
    /// Horizontal motion in pixels per frame.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vx: Option<f64>,
    /// Vertical motion in pixels per frame.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vy: Option<f64>,
    /// Leakage fraction of the reference intensity.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specular_density: Option<f64>,
    /// Use a flat reference of this value instead of texture.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_reference: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub config_version: u32,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub blobs: usize,
    pub vx: f64,
    pub vy: f64,
    pub alpha: f64,
    pub specular_density: f64,
    pub flat_reference: Option<f64>,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SceneSpec::default();
        SynthConfig {
            config_version: CONFIG_VERSION,
            out: None,
            seed: 0,
            width: s.width,
            height: s.height,
            length: s.length,
            blobs: s.blobs,
            vx: s.velocity.0,
            vy: s.velocity.1,
            alpha: s.alpha,
            specular_density: s.specular_density,
            flat_reference: None,
            fps: s.fps,
        }
    }
}

impl SynthConfig {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            length: self.length,
            blobs: self.blobs,
            velocity: (self.vx, self.vy),
            specular_density: self.specular_density,
            alpha: self.alpha,
            reference: match self.flat_reference {
                Some(v) => ReferenceTexture::Flat(v),
                None => ReferenceTexture::Textured,
            },
            fps: self.fps,
        }
    }
}

fn run_synth(cfg: &SynthConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let spec = cfg.spec();
    spec.validate()?;
    let scene = generate_synthetic_scene(&spec, cfg.seed)?;
    let mut manifest = DatasetManifest::new(out);
    let mut channels = std::collections::BTreeMap::new();
    let mut write = |tag: ChannelTag, seq: &VideoSequence| -> CliResult<()> {
        let rel = PathBuf::from(&scene.id).join(tag.as_str());
        save_sequence(seq, out.join(&rel), FrameFormat::Png16)?;
        channels.insert(tag, rel);
        Ok(())
    };
    write(ChannelTag::FluorescenceClean, &scene.clean)?;
    write(ChannelTag::Reference, &scene.reference)?;
    if let Some(l) = &scene.leakage {
        write(ChannelTag::Leakage, l)?;
    }
    manifest.entries.push(ManifestEntry {
        sequence_id: scene.id.clone(),
        channels,
        fps: scene.clean.fps(),
        length: scene.len(),
    });
    manifest.save(out.join("manifest.json"))?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

/// Noise-model flags shared by the simulating commands.
#[derive(Args, Debug, Serialize)]
pub struct NoiseFlags {
    #[arg(long = "sm")]
    #[serde(rename = "S_m", skip_serializing_if = "Option::is_none")]
    pub s_m: Option<f64>,
    #[arg(long = "lm")]
    #[serde(rename = "L_m", skip_serializing_if = "Option::is_none")]
    pub l_m: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub camera: CameraFlags,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Dataset manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Sequence id within the manifest; optional for single-entry manifests.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub noise: NoiseFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Leakage predictor JSON; the manifest's leakage channel when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lll: Option<PathBuf>,
    /// `none`, `procedural`, or a dark-frame sequence path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_noise: Option<String>,
    /// Output directory for the raw noisy video and noise.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub config_version: u32,
    pub input: Option<PathBuf>,
    pub entry: Option<String>,
    #[serde(rename = "S_m")]
    pub s_m: f64,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "R_m")]
    pub r_m: f64,
    #[serde(rename = "inv_K")]
    pub inv_k: f64,
    pub bit_depth: u32,
    pub seed: u64,
    pub lll: Option<PathBuf>,
    pub read_noise: String,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            config_version: CONFIG_VERSION,
            input: None,
            entry: None,
            s_m: 50.0,
            l_m: 25.0,
            r_m: PAPER_TEST_R_M,
            inv_k: PAPER_TEST_INV_K,
            bit_depth: DEFAULT_BIT_DEPTH,
            seed: 0,
            lll: None,
            read_noise: "procedural".into(),
            out: None,
        }
    }
}

fn noise_params(
    s_m: f64,
    l_m: f64,
    r_m: f64,
    inv_k: f64,
    bit_depth: u32,
    seed: u64,
) -> CliResult<NoiseParams> {
    Ok(NoiseConfig {
        s_m,
        l_m,
        r_m,
        inv_k,
        bit_depth,
        seed,
    }
    .params()?)
}

/// Where read noise comes from.
enum ReadNoiseSource {
    None,
    Procedural,
    Path(PathBuf),
}

fn parse_read_noise(s: &str) -> ReadNoiseSource {
    match s {
        "none" => ReadNoiseSource::None,
        "procedural" => ReadNoiseSource::Procedural,
        path => ReadNoiseSource::Path(PathBuf::from(path)),
    }
}

/// A bank matching the scene: procedural banks hold twice the scene
/// length (at least 64 frames) so the window start is random.
fn build_bank(
    source: &ReadNoiseSource,
    scene: &Scene,
    seed: u64,
) -> CliResult<Option<ReadNoiseBank>> {
    Ok(match source {
        ReadNoiseSource::None => None,
        ReadNoiseSource::Procedural => {
            let spec = ProceduralBankSpec {
                width: scene.clean.width(),
                height: scene.clean.height(),
                length: (2 * scene.len()).max(64),
                ..ProceduralBankSpec::default()
            };
            Some(ReadNoiseBank::procedural(&spec, seed)?)
        }
        ReadNoiseSource::Path(p) => {
            let seq = load_sequence(p, ChannelTag::ReadNoise)?;
            Some(ReadNoiseBank::from_sequence(seq, p.display().to_string())?)
        }
    })
}

fn load_entry_scene(input: &Option<PathBuf>, entry: &Option<String>) -> CliResult<Scene> {
    let path = required(input, "input")?;
    let manifest = DatasetManifest::load(path)?;
    let e = manifest.select(entry.as_deref())?;
    Ok(manifest.load_scene(e)?)
}

fn run_simulate(cfg: &SimulateConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let p = noise_params(
        cfg.s_m,
        cfg.l_m,
        cfg.r_m,
        cfg.inv_k,
        cfg.bit_depth,
        cfg.seed,
    )?;
    let predictor = cfg.lll.as_ref().map(LeakagePredictor::load).transpose()?;
    let scene = load_entry_scene(&cfg.input, &cfg.entry)?;
    let bank = build_bank(&parse_read_noise(&cfg.read_noise), &scene, cfg.seed)?;
    let source = match &predictor {
        Some(pred) => LeakageSource::Predictor(pred),
        None => LeakageSource::Oracle,
    };
    let noisy = simulate_sequence(&scene, source, bank.as_ref(), &p, cfg.seed)?;
    save_sequence(&noisy, out, FrameFormat::RawF32)?;
    write_json(
        &out.join("noise.json"),
        &NoiseConfig::from_params(&p, cfg.seed),
    )
}

// ---------------------------------------------------------------- calibrate

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Phantom video: a frame directory or raw sequence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video: Option<PathBuf>,
    /// JSON list of `{x, y, width, height}` rectangles.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub config_version: u32,
    pub video: Option<PathBuf>,
    pub roi: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            config_version: CONFIG_VERSION,
            video: None,
            roi: None,
            out: None,
        }
    }
}

fn run_calibrate(cfg: &CalibrateConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let rects = load_rois(required(&cfg.roi, "roi")?)?;
    let video = load_sequence(required(&cfg.video, "video")?, ChannelTag::NoisyFv)?;
    let mask = roi_mask(&rects, video.width(), video.height())?;
    let gain = estimate_gain(&video, &mask)?;
    write_json(out, &GainReport::from(&gain))
}

// ---------------------------------------------------------------- fit-lll

#[derive(Args, Debug, Serialize)]
pub struct FitLllArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Manifest whose entries carry reference and leakage channels.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// `oracle`, `affine` or `patch_affine`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitLllConfig {
    pub config_version: u32,
    pub pairs: Option<PathBuf>,
    pub kind: String,
    pub out: Option<PathBuf>,
}

impl Default for FitLllConfig {
    fn default() -> Self {
        FitLllConfig {
            config_version: CONFIG_VERSION,
            pairs: None,
            kind: "affine".into(),
            out: None,
        }
    }
}

fn run_fit_lll(cfg: &FitLllConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let kind: PredictorKind = cfg.kind.parse()?;
    let manifest = DatasetManifest::load(required(&cfg.pairs, "pairs")?)?;
    let mut pairs = Vec::new();
    for e in &manifest.entries {
        let r = manifest.load_channel(e, ChannelTag::Reference)?;
        let l = manifest.load_channel(e, ChannelTag::Leakage)?;
        pairs.extend(r.into_frames().into_iter().zip(l.into_frames()));
    }
    let predictor = fit_predictor(&pairs, kind)?;
    predictor.save(out)?;
    Ok(())
}

// ---------------------------------------------------------------- denoise

#[derive(Args, Debug, Serialize)]
pub struct DenoiseArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Noisy fluorescence video.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fv: Option<PathBuf>,
    /// Reference video.
    #[arg(long = "ref")]
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Leakage predictor JSON.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lll: Option<PathBuf>,
    /// Ground-truth leakage video, used when the predictor is `oracle`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_leakage: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// `auto`, `nominal` (needs --sm and --lm) or a fixed number.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
    #[arg(long = "sm")]
    #[serde(rename = "S_m", skip_serializing_if = "Option::is_none")]
    pub s_m: Option<f64>,
    #[arg(long = "lm")]
    #[serde(rename = "L_m", skip_serializing_if = "Option::is_none")]
    pub l_m: Option<f64>,
    /// Gaussian smoothing sigma after subtraction; 0 disables it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smooth: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseConfig {
    pub config_version: u32,
    pub fv: Option<PathBuf>,
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    pub lll: Option<PathBuf>,
    pub oracle_leakage: Option<PathBuf>,
    pub nmax: f64,
    pub tau: f64,
    pub beta: String,
    #[serde(rename = "S_m")]
    pub s_m: Option<f64>,
    #[serde(rename = "L_m")]
    pub l_m: Option<f64>,
    pub smooth: f64,
    pub out: Option<PathBuf>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            config_version: CONFIG_VERSION,
            fv: None,
            reference: None,
            lll: None,
            oracle_leakage: None,
            nmax: DEFAULT_N_MAX,
            tau: DEFAULT_TAU,
            beta: "auto".into(),
            s_m: None,
            l_m: None,
            smooth: 0.0,
            out: None,
        }
    }
}

fn parse_beta(s: &str) -> CliResult<LeakageScale> {
    match s {
        "auto" => Ok(LeakageScale::Estimated),
        "nominal" => Ok(LeakageScale::Nominal),
        v => v.parse::<f64>().map(LeakageScale::Fixed).map_err(|_| {
            CliError::invalid(format!("beta must be auto, nominal or a number, got '{v}'"))
        }),
    }
}

fn run_denoise(cfg: &DenoiseConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let scale = parse_beta(&cfg.beta)?;
    let params = match (cfg.s_m, cfg.l_m) {
        (Some(s), Some(l)) => Some(NoiseParams::paper_test(s, l)?),
        (None, None) => None,
        _ => return Err(CliError::invalid("give both S_m and L_m or neither")),
    };
    if scale == LeakageScale::Nominal && params.is_none() {
        return Err(CliError::invalid("beta nominal needs S_m and L_m"));
    }
    let predictor = match &cfg.lll {
        Some(p) => LeakagePredictor::load(p)?,
        None if cfg.oracle_leakage.is_some() => LeakagePredictor::Oracle,
        None => LeakagePredictor::zero(),
    };
    let pipeline = PipelineConfig {
        n_max: cfg.nmax,
        tau: cfg.tau,
        leakage_predictor: predictor,
        leakage_scale: scale,
        spatial_smoother: if cfg.smooth > 0.0 {
            Smoother::Gaussian(cfg.smooth)
        } else {
            Smoother::None
        },
        ..PipelineConfig::default()
    };
    pipeline.validate()?;
    let noisy = load_sequence(required(&cfg.fv, "fv")?, ChannelTag::NoisyFv)?;
    let reference = load_sequence(required(&cfg.reference, "ref")?, ChannelTag::Reference)?;
    let oracle = cfg
        .oracle_leakage
        .as_ref()
        .map(|p| load_sequence(p, ChannelTag::Leakage))
        .transpose()?;
    let denoised = run_causal(
        &noisy,
        &reference,
        oracle.as_ref(),
        &pipeline,
        params.as_ref(),
    )?;
    save_sequence(&denoised, out, FrameFormat::RawF32)?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Video to score.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathBuf>,
    /// Clean ground truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Include per-frame scores.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub per_frame: bool,
    /// Report JSON path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub config_version: u32,
    pub estimate: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub per_frame: bool,
    pub out: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            config_version: CONFIG_VERSION,
            estimate: None,
            truth: None,
            per_frame: false,
            out: None,
        }
    }
}

fn run_evaluate(cfg: &EvaluateConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let estimate = load_sequence(required(&cfg.estimate, "estimate")?, ChannelTag::Denoised)?;
    let truth = load_sequence(
        required(&cfg.truth, "truth")?,
        ChannelTag::FluorescenceClean,
    )?;
    let report = evaluate(&estimate, &truth, cfg.per_frame)?;
    write_json(out, &report)
}

// ---------------------------------------------------------------- sweep

/// Builds denoisers from names: `identity`, `temporal_average:<window>`
/// and `align_and_merge`.
pub fn parse_denoisers(
    names: &[String],
    pipeline: &PipelineConfig,
) -> CliResult<Vec<Box<dyn Denoiser>>> {
    if names.is_empty() {
        return Err(CliError::invalid("no denoisers given"));
    }
    names
        .iter()
        .map(|n| -> CliResult<Box<dyn Denoiser>> {
            match n.as_str() {
                "identity" => Ok(Box::new(Identity)),
                "align_and_merge" => Ok(Box::new(AlignAndMerge::new(pipeline.clone()))),
                other => {
                    let w = other
                        .strip_prefix("temporal_average:")
                        .and_then(|w| w.parse::<usize>().ok())
                        .filter(|&w| w > 0)
                        .ok_or_else(|| CliError::invalid(format!("unknown denoiser '{other}'")))?;
                    Ok(Box::new(TemporalAverage { window: w }))
                }
            }
        })
        .collect()
}

fn default_denoisers() -> Vec<String> {
    vec![
        "identity".into(),
        "temporal_average:8".into(),
        "align_and_merge".into(),
    ]
}

/// Merge settings for the align-and-merge entries of sweeps and
/// experiments: oracle leakage scaled by the nominal `L_m / S_m`.
fn experiment_pipeline(nmax: f64, tau: f64) -> CliResult<PipelineConfig> {
    let cfg = PipelineConfig {
        n_max: nmax,
        tau,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    /// Comma-separated S_m values.
    #[arg(long = "sm", value_delimiter = ',')]
    #[serde(rename = "s_values", skip_serializing_if = "Option::is_none")]
    pub s_values: Option<Vec<f64>>,
    /// Comma-separated L_m / S_m values.
    #[arg(long = "ratios", value_delimiter = ',')]
    #[serde(rename = "ratio_values", skip_serializing_if = "Option::is_none")]
    pub ratio_values: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub camera: CameraFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Comma-separated denoiser names.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoisers: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_noise: Option<String>,
    /// Output directory for sweep.csv, robustness.json and winners.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub config_version: u32,
    pub input: Option<PathBuf>,
    pub entry: Option<String>,
    pub s_values: Vec<f64>,
    pub ratio_values: Vec<f64>,
    pub trials: usize,
    #[serde(rename = "R_m")]
    pub r_m: f64,
    #[serde(rename = "inv_K")]
    pub inv_k: f64,
    pub bit_depth: u32,
    pub seed: u64,
    pub denoisers: Vec<String>,
    pub nmax: f64,
    pub tau: f64,
    pub read_noise: String,
    pub out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            config_version: CONFIG_VERSION,
            input: None,
            entry: None,
            s_values: DEFAULT_S_VALUES.to_vec(),
            ratio_values: DEFAULT_RATIO_VALUES.to_vec(),
            trials: 1,
            r_m: PAPER_TEST_R_M,
            inv_k: PAPER_TEST_INV_K,
            bit_depth: DEFAULT_BIT_DEPTH,
            seed: 0,
            denoisers: default_denoisers(),
            nmax: DEFAULT_N_MAX,
            tau: DEFAULT_TAU,
            read_noise: "procedural".into(),
            out: None,
        }
    }
}

fn run_sweep_cmd(cfg: &SweepConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let spec = SweepSpec {
        s_values: cfg.s_values.clone(),
        ratio_values: cfg.ratio_values.clone(),
        trials: cfg.trials,
        r_m: cfg.r_m,
        inv_k: cfg.inv_k,
        bit_depth: cfg.bit_depth,
    };
    spec.validate()?;
    let denoisers = parse_denoisers(&cfg.denoisers, &experiment_pipeline(cfg.nmax, cfg.tau)?)?;
    let scene = load_entry_scene(&cfg.input, &cfg.entry)?;
    let bank = build_bank(&parse_read_noise(&cfg.read_noise), &scene, cfg.seed)?;
    let grid = run_sweep(&scene, &denoisers, &spec, bank.as_ref(), cfg.seed)?;
    grid.save(out)?;
    Ok(())
}

// ---------------------------------------------------------------- repeat-frames

#[derive(Args, Debug, Serialize)]
pub struct RepeatFramesArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub noise: NoiseFlags,
    /// Number of copies of the first frame.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoisers: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_noise: Option<String>,
    /// Per-frame PSNR CSV path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatFramesConfig {
    pub config_version: u32,
    pub input: Option<PathBuf>,
    pub entry: Option<String>,
    #[serde(rename = "S_m")]
    pub s_m: f64,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "R_m")]
    pub r_m: f64,
    #[serde(rename = "inv_K")]
    pub inv_k: f64,
    pub bit_depth: u32,
    pub frames: usize,
    pub trials: usize,
    pub seed: u64,
    pub denoisers: Vec<String>,
    pub nmax: f64,
    pub tau: f64,
    pub read_noise: String,
    pub out: Option<PathBuf>,
}

impl Default for RepeatFramesConfig {
    fn default() -> Self {
        RepeatFramesConfig {
            config_version: CONFIG_VERSION,
            input: None,
            entry: None,
            s_m: 25.0,
            l_m: 12.5,
            r_m: PAPER_TEST_R_M,
            inv_k: PAPER_TEST_INV_K,
            bit_depth: DEFAULT_BIT_DEPTH,
            frames: DEFAULT_REPEATS,
            trials: 4,
            seed: 0,
            denoisers: default_denoisers(),
            nmax: DEFAULT_N_MAX,
            tau: DEFAULT_TAU,
            read_noise: "procedural".into(),
            out: None,
        }
    }
}

fn run_repeat_frames(cfg: &RepeatFramesConfig) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let p = noise_params(
        cfg.s_m,
        cfg.l_m,
        cfg.r_m,
        cfg.inv_k,
        cfg.bit_depth,
        cfg.seed,
    )?;
    if cfg.frames == 0 || cfg.trials == 0 {
        return Err(CliError::invalid("frames and trials must be positive"));
    }
    let denoisers = parse_denoisers(&cfg.denoisers, &experiment_pipeline(cfg.nmax, cfg.tau)?)?;
    let scene = load_entry_scene(&cfg.input, &cfg.entry)?;
    let first = scene.repeat_frame(0, cfg.frames)?;
    let bank = build_bank(&parse_read_noise(&cfg.read_noise), &first, cfg.seed)?;
    let result = repeat_frames_experiment(
        &scene,
        &denoisers,
        &p,
        bank.as_ref(),
        cfg.frames,
        cfg.trials,
        cfg.seed,
    )?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf).map_err(|e| Error::io(out, e))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(out, buf).map_err(|e| Error::io(out, e))?;
    Ok(())
}

// ---------------------------------------------------------------- plumbing

fn required<'a>(v: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::invalid(format!("missing required setting '{key}'")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn merge_object(
    base: &mut Map<String, Value>,
    layer: Map<String, Value>,
    origin: &str,
) -> CliResult<()> {
    for (k, v) in layer {
        if !base.contains_key(&k) {
            return Err(CliError::invalid(format!(
                "unknown configuration key '{k}' in {origin}"
            )));
        }
        base.insert(k, v);
    }
    Ok(())
}

/// Defaults, then the config file, then the profile, then the flags.
pub fn resolve_config<C, A>(common: &Common, flags: &A) -> CliResult<C>
where
    C: Default + Serialize + DeserializeOwned,
    A: Serialize,
{
    let Value::Object(mut base) = serde_json::to_value(C::default()).map_err(Error::from)? else {
        unreachable!("configurations serialize to objects")
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let Value::Object(layer) = value else {
            return Err(CliError::invalid(format!(
                "{}: expected a JSON object",
                path.display()
            )));
        };
        merge_object(&mut base, layer, &path.display().to_string())?;
    }
    if common.profile == Some(Profile::PaperTest) {
        for (k, v) in [
            ("inv_K", Value::from(PAPER_TEST_INV_K)),
            ("R_m", Value::from(PAPER_TEST_R_M)),
            ("bit_depth", Value::from(DEFAULT_BIT_DEPTH)),
        ] {
            if base.contains_key(k) {
                base.insert(k.into(), v);
            }
        }
    }
    if let Value::Object(layer) = serde_json::to_value(flags).map_err(Error::from)? {
        merge_object(&mut base, layer, "flags")?;
    }
    if base.get("config_version") != Some(&Value::from(CONFIG_VERSION)) {
        return Err(CliError::invalid(format!(
            "config_version must be {CONFIG_VERSION}"
        )));
    }
    serde_json::from_value(Value::Object(base))
        .map_err(|e| CliError::invalid(format!("configuration: {e}")))
}

fn log_config<C: Serialize>(command: &str, cfg: &C) -> CliResult<()> {
    let line = serde_json::json!({ "command": command, "config": cfg });
    println!("{line}");
    Ok(())
}

fn execute<C, A>(
    name: &str,
    common: &Common,
    flags: &A,
    run: fn(&C) -> CliResult<()>,
) -> CliResult<()>
where
    C: Default + Serialize + DeserializeOwned,
    A: Serialize,
{
    let cfg: C = resolve_config(common, flags)?;
    log_config(name, &cfg)?;
    run(&cfg)
}

/// Caps the rayon pool from `FGSIM_THREADS`. Only the first call in a
/// process takes effect.
fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::invalid(format!(
            "{THREADS_ENV} must be a positive integer, got '{v}'"
        ))
    })?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => execute::<SynthConfig, _>("synth", &a.common, a, run_synth),
        Command::Simulate(a) => {
            execute::<SimulateConfig, _>("simulate", &a.common, a, run_simulate)
        }
        Command::Calibrate(a) => {
            execute::<CalibrateConfig, _>("calibrate", &a.common, a, run_calibrate)
        }
        Command::FitLll(a) => execute::<FitLllConfig, _>("fit-lll", &a.common, a, run_fit_lll),
        Command::Denoise(a) => execute::<DenoiseConfig, _>("denoise", &a.common, a, run_denoise),
        Command::Evaluate(a) => {
            execute::<EvaluateConfig, _>("evaluate", &a.common, a, run_evaluate)
        }
        Command::Sweep(a) => execute::<SweepConfig, _>("sweep", &a.common, a, run_sweep_cmd),
        Command::RepeatFrames(a) => {
            execute::<RepeatFramesConfig, _>("repeat-frames", &a.common, a, run_repeat_frames)
        }
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("fgsim: {}", e.message);
            e.code
        }
    }
}
