//! Repeated-frame protocol: one frame duplicated into a static video,
//! re-noised independently per frame, to watch denoisers converge.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::{DenoiseInput, Denoiser};
use crate::error::{Error, Result};
use crate::frameio::Scene;
use crate::metrics::psnr;
use crate::noise::{simulate_sequence_with_id, LeakageSource, NoiseParams, ReadNoiseBank};

pub const DEFAULT_REPEATS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatFramesResult {
    pub denoisers: Vec<String>,
    /// Trial-averaged PSNR, indexed `[denoiser][frame]`.
    pub psnr: Vec<Vec<f64>>,
    pub trials: usize,
}

impl RepeatFramesResult {
    pub fn curve(&self, name: &str) -> Option<&[f64]> {
        self.denoisers
            .iter()
            .position(|d| d == name)
            .map(|i| self.psnr[i].as_slice())
    }

    /// Rows `frame,denoiser,psnr`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "frame,denoiser,psnr")?;
        for (name, curve) in self.denoisers.iter().zip(&self.psnr) {
            for (t, v) in curve.iter().enumerate() {
                writeln!(w, "{t},{name},{v:.6}")?;
            }
        }
        Ok(())
    }
}

/// Duplicates frame 0 of `scene` `n` times, simulates `trials` noisy
/// versions with the scene's own leakage and scores every denoiser per
/// frame. Trial `k` uses stream id `k` under `seed`.
pub fn repeat_frames_experiment(
    scene: &Scene,
    denoisers: &[Box<dyn Denoiser>],
    params: &NoiseParams,
    bank: Option<&ReadNoiseBank>,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<RepeatFramesResult> {
    if scene.is_empty() {
        return Err(Error::param("scene has no frames"));
    }
    if trials == 0 || denoisers.is_empty() {
        return Err(Error::param("need at least one trial and one denoiser"));
    }
    params.validate()?;
    let static_scene = scene.repeat_frame(0, n)?;
    let per_trial: Vec<Vec<Vec<f64>>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let noisy = simulate_sequence_with_id(
                &static_scene,
                LeakageSource::Oracle,
                bank,
                params,
                seed,
                k as u64,
            )?;
            let input = DenoiseInput {
                noisy: &noisy,
                reference: &static_scene.reference,
                oracle_leakage: static_scene.leakage.as_ref(),
                params: Some(params),
            };
            denoisers
                .iter()
                .map(|d| {
                    let out = d.denoise(&input)?;
                    out.iter()
                        .zip(static_scene.clean.iter())
                        .map(|(a, b)| psnr(a, b))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let psnr = (0..denoisers.len())
        .map(|d| {
            (0..n)
                .map(|t| per_trial.iter().map(|tr| tr[d][t]).sum::<f64>() / trials as f64)
                .collect()
        })
        .collect();
    Ok(RepeatFramesResult {
        denoisers: denoisers.iter().map(|d| d.name()).collect(),
        psnr,
        trials,
    })
}
