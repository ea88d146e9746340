//! Calibrated fluorescence-guided-surgery video noise simulation and causal
//! video denoising.
//!
//! The crate is organised around a handful of stages:
//!
//! - [`frameio`]: frame containers, on-disk sequences, manifests and a
//!   synthetic scene generator.
//! - [`noise`]: the shot/leakage/read-noise camera model with a 12-bit style
//!   quantizer and seedable per-frame random streams.
//! - [`calib`]: gain estimation from phantom video and dark-frame statistics.
//! - [`leakage`]: laser-leakage predictors driven by the reference video.
//! - [`flow`]: pyramidal dense flow, backward warping and occlusion masks.
//! - [`denoise`]: the causal align-and-merge recursion and baselines.
//! - [`metrics`]: PSNR, SSIM, leakage robustness fits and parameter sweeps.
//! - [`experiment`] and [`cli`]: the repeated-frames protocol and the
//!   `fgsim` command line.

pub mod calib;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod frame;
pub mod frameio;
pub mod leakage;
pub mod metrics;
pub mod noise;
pub mod rng;

pub use error::{Error, Result};
pub use frame::{ChannelTag, Frame, VideoSequence};
