//! Grid sweep over signal level and relative leakage.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_m_lll, psnr_sequence, ssim_sequence, RobustnessFit};
use crate::denoise::{DenoiseInput, Denoiser};
use crate::error::{Error, Result};
use crate::frameio::Scene;
use crate::noise::{
    simulate_sequence_with_id, LeakageSource, NoiseParams, ReadNoiseBank, DEFAULT_BIT_DEPTH,
    PAPER_TEST_INV_K, PAPER_TEST_R_M,
};

pub const DEFAULT_S_VALUES: [f64; 6] = [10.0, 25.0, 50.0, 100.0, 150.0, 200.0];
pub const DEFAULT_RATIO_VALUES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub s_values: Vec<f64>,
    /// `L_m / S_m` levels.
    pub ratio_values: Vec<f64>,
    pub trials: usize,
    #[serde(rename = "R_m")]
    pub r_m: f64,
    #[serde(rename = "inv_K")]
    pub inv_k: f64,
    pub bit_depth: u32,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            s_values: DEFAULT_S_VALUES.to_vec(),
            ratio_values: DEFAULT_RATIO_VALUES.to_vec(),
            trials: 1,
            r_m: PAPER_TEST_R_M,
            inv_k: PAPER_TEST_INV_K,
            bit_depth: DEFAULT_BIT_DEPTH,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.s_values.is_empty() || self.ratio_values.is_empty() {
            return Err(Error::param("sweep grid is empty"));
        }
        if self.trials == 0 {
            return Err(Error::param("sweep needs at least one trial"));
        }
        if self
            .ratio_values
            .iter()
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(Error::param("leakage ratios must be non-negative"));
        }
        for (_, _, p) in self.cells() {
            p?;
        }
        Ok(())
    }

    /// Noise parameters of every cell in row-major `(S_m, ratio)` order.
    fn cells(&self) -> impl Iterator<Item = (f64, f64, Result<NoiseParams>)> + '_ {
        self.s_values.iter().flat_map(move |&s| {
            self.ratio_values.iter().map(move |&r| {
                (
                    s,
                    r,
                    NoiseParams::new(s, r * s, self.r_m, 1.0 / self.inv_k, self.bit_depth),
                )
            })
        })
    }
}

/// Scores of one denoiser on one trial of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub s_m: f64,
    pub ratio: f64,
    pub denoiser: String,
    pub trial: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Trial-averaged scores of one denoiser in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub s_m: f64,
    pub ratio: f64,
    pub denoiser: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub s_values: Vec<f64>,
    pub ratio_values: Vec<f64>,
    pub denoisers: Vec<String>,
    /// Ordered by S_m, then ratio, then denoiser.
    pub cells: Vec<SweepCell>,
    pub trials: Vec<SweepTrial>,
}

/// Best denoiser per cell for one metric, indexed `[s][ratio]`.
pub type WinnerMap = Vec<Vec<String>>;

impl SweepGrid {
    pub fn cell(&self, s_index: usize, r_index: usize, denoiser: usize) -> &SweepCell {
        let nd = self.denoisers.len();
        &self.cells[(s_index * self.ratio_values.len() + r_index) * nd + denoiser]
    }

    fn winners_by(&self, metric: impl Fn(&SweepCell) -> f64) -> WinnerMap {
        (0..self.s_values.len())
            .map(|si| {
                (0..self.ratio_values.len())
                    .map(|ri| {
                        // First denoiser wins ties.
                        let mut best = 0;
                        for d in 1..self.denoisers.len() {
                            if metric(self.cell(si, ri, d)) > metric(self.cell(si, ri, best)) {
                                best = d;
                            }
                        }
                        self.denoisers[best].clone()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn winners_psnr(&self) -> WinnerMap {
        self.winners_by(|c| c.psnr)
    }

    pub fn winners_ssim(&self) -> WinnerMap {
        self.winners_by(|c| c.ssim)
    }

    /// PSNR against `L_m / S_m` fitted per denoiser and per S_m.
    pub fn robustness(&self) -> Result<BTreeMap<String, BTreeMap<String, RobustnessFit>>> {
        let mut out = BTreeMap::new();
        for (d, name) in self.denoisers.iter().enumerate() {
            let mut per_s = BTreeMap::new();
            for (si, s) in self.s_values.iter().enumerate() {
                let pts: Vec<(f64, f64)> = (0..self.ratio_values.len())
                    .map(|ri| {
                        let c = self.cell(si, ri, d);
                        (c.ratio, c.psnr)
                    })
                    .collect();
                if let Ok(fit) = fit_m_lll(&pts) {
                    per_s.insert(format!("{s}"), fit);
                }
            }
            out.insert(name.clone(), per_s);
        }
        Ok(out)
    }

    /// Per-trial rows as `S_m,ratio,denoiser,trial,psnr,ssim`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "S_m,ratio,denoiser,trial,psnr,ssim")?;
        for t in &self.trials {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6}",
                t.s_m, t.ratio, t.denoiser, t.trial, t.psnr, t.ssim
            )?;
        }
        Ok(())
    }

    /// Writes `sweep.csv`, `robustness.json` and `winners.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("sweep.csv");
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&csv, buf).map_err(|e| Error::io(&csv, e))?;

        let rob = dir.join("robustness.json");
        let text = serde_json::to_string_pretty(&self.robustness()?)?;
        std::fs::write(&rob, text + "\n").map_err(|e| Error::io(&rob, e))?;

        let mut winners = BTreeMap::new();
        winners.insert("psnr", self.winners_psnr());
        winners.insert("ssim", self.winners_ssim());
        let win = dir.join("winners.json");
        let text = serde_json::to_string_pretty(&serde_json::json!({
            "s_values": self.s_values,
            "ratio_values": self.ratio_values,
            "winners": winners,
        }))?;
        std::fs::write(&win, text + "\n").map_err(|e| Error::io(&win, e))?;
        Ok(())
    }
}

/// Simulates every `(S_m, ratio)` cell `trials` times and scores each
/// denoiser with pooled-sequence PSNR and mean SSIM.
///
/// Trial `k` of cell `c` uses stream id `c << 32 | k` under `seed`, so the
/// grid is reproducible regardless of thread count. Leakage is the scene's
/// own leakage channel.
pub fn run_sweep(
    scene: &Scene,
    denoisers: &[Box<dyn Denoiser>],
    spec: &SweepSpec,
    bank: Option<&ReadNoiseBank>,
    seed: u64,
) -> Result<SweepGrid> {
    spec.validate()?;
    if denoisers.is_empty() {
        return Err(Error::param("sweep needs at least one denoiser"));
    }
    if scene.leakage.is_none() {
        return Err(Error::MissingChannel("leakage".into()));
    }
    let names: Vec<String> = denoisers.iter().map(|d| d.name()).collect();
    let params: Vec<(f64, f64, NoiseParams)> = spec
        .cells()
        .map(|(s, r, p)| p.map(|p| (s, r, p)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..params.len())
        .flat_map(|c| (0..spec.trials).map(move |k| (c, k)))
        .collect();
    let scored: Vec<Vec<SweepTrial>> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let (s, r, p) = params[c];
            let id = ((c as u64) << 32) | k as u64;
            let noisy =
                simulate_sequence_with_id(scene, LeakageSource::Oracle, bank, &p, seed, id)?;
            let input = DenoiseInput {
                noisy: &noisy,
                reference: &scene.reference,
                oracle_leakage: scene.leakage.as_ref(),
                params: Some(&p),
            };
            denoisers
                .iter()
                .zip(&names)
                .map(|(d, name)| {
                    let out = d.denoise(&input)?;
                    Ok(SweepTrial {
                        s_m: s,
                        ratio: r,
                        denoiser: name.clone(),
                        trial: k,
                        psnr: psnr_sequence(&out, &scene.clean)?,
                        ssim: ssim_sequence(&out, &scene.clean)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let nd = denoisers.len();
    let mut cells = Vec::with_capacity(params.len() * nd);
    for (c, &(s, r, _)) in params.iter().enumerate() {
        let rows = &scored[c * spec.trials..(c + 1) * spec.trials];
        for (d, name) in names.iter().enumerate() {
            let n = spec.trials as f64;
            cells.push(SweepCell {
                s_m: s,
                ratio: r,
                denoiser: name.clone(),
                psnr: rows.iter().map(|t| t[d].psnr).sum::<f64>() / n,
                ssim: rows.iter().map(|t| t[d].ssim).sum::<f64>() / n,
            });
        }
    }
    // Row order: cell, denoiser, trial.
    let mut trials = Vec::with_capacity(jobs.len() * nd);
    for cell in scored.chunks(spec.trials) {
        for d in 0..nd {
            trials.extend(cell.iter().map(|per| per[d].clone()));
        }
    }
    Ok(SweepGrid {
        s_values: spec.s_values.clone(),
        ratio_values: spec.ratio_values.clone(),
        denoisers: names,
        cells,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{AlignAndMerge, Identity, TemporalAverage};
    use crate::frame::{ChannelTag, VideoSequence};
    use crate::frameio::{generate_synthetic_scene, SceneSpec};

    /// Adds a constant error on top of another denoiser.
    struct Worse(Box<dyn Denoiser>);

    impl Denoiser for Worse {
        fn name(&self) -> String {
            format!("{}_worse", self.0.name())
        }

        fn denoise(&self, input: &DenoiseInput<'_>) -> Result<VideoSequence> {
            let out = self.0.denoise(input)?;
            let frames = out.iter().map(|f| f.map(|v| v + 0.05)).collect();
            VideoSequence::new(frames, out.fps(), ChannelTag::Denoised)
        }
    }

    fn static_scene(len: usize) -> Scene {
        let spec = SceneSpec {
            width: 32,
            height: 32,
            length: len,
            velocity: (0.0, 0.0),
            ..SceneSpec::default()
        };
        generate_synthetic_scene(&spec, 4).unwrap()
    }

    #[test]
    fn noiseless_identity_hits_cap() {
        let scene = static_scene(2);
        let spec = SweepSpec {
            s_values: vec![1e14],
            ratio_values: vec![0.0],
            trials: 1,
            r_m: 1.0,
            inv_k: 1e14,
            bit_depth: 30,
        };
        let ds: Vec<Box<dyn Denoiser>> = vec![Box::new(Identity)];
        let g = run_sweep(&scene, &ds, &spec, None, 1).unwrap();
        assert_eq!(g.cells.len(), 1);
        assert_eq!(g.cells[0].psnr, 100.0);
    }

    #[test]
    fn dominated_denoiser_never_wins() {
        let scene = static_scene(3);
        let spec = SweepSpec {
            s_values: vec![25.0, 100.0],
            ratio_values: vec![0.0, 0.5],
            trials: 2,
            ..SweepSpec::default()
        };
        let ds: Vec<Box<dyn Denoiser>> =
            vec![Box::new(Identity), Box::new(Worse(Box::new(Identity)))];
        let g = run_sweep(&scene, &ds, &spec, None, 3).unwrap();
        assert_eq!(g.cells.len(), 2 * 2 * 2);
        assert_eq!(g.trials.len(), 2 * 2 * 2 * 2);
        for row in g.winners_psnr() {
            assert!(row.iter().all(|w| w == "identity"));
        }
    }

    #[test]
    fn align_and_merge_beats_single_frame() {
        let scene = static_scene(16);
        let spec = SweepSpec {
            s_values: vec![25.0],
            ratio_values: vec![0.0, 0.5, 1.0],
            trials: 1,
            ..SweepSpec::default()
        };
        let ds: Vec<Box<dyn Denoiser>> = vec![
            Box::new(AlignAndMerge::default()),
            Box::new(TemporalAverage { window: 1 }),
        ];
        let g = run_sweep(&scene, &ds, &spec, None, 9).unwrap();
        for ri in 0..3 {
            let am = g.cell(0, ri, 0).psnr;
            let single = g.cell(0, ri, 1).psnr;
            assert!(
                am > single + 3.0,
                "ratio {}: {am} vs {single}",
                g.ratio_values[ri]
            );
        }
    }

    #[test]
    fn deterministic() {
        let scene = static_scene(3);
        let spec = SweepSpec {
            s_values: vec![50.0],
            ratio_values: vec![0.0, 1.0],
            trials: 2,
            ..SweepSpec::default()
        };
        let ds: Vec<Box<dyn Denoiser>> = vec![Box::new(Identity)];
        let a = run_sweep(&scene, &ds, &spec, None, 5).unwrap();
        let b = run_sweep(&scene, &ds, &spec, None, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let scene = static_scene(2);
        let ds: Vec<Box<dyn Denoiser>> = vec![Box::new(Identity)];
        let empty = SweepSpec {
            s_values: vec![],
            ..SweepSpec::default()
        };
        assert!(run_sweep(&scene, &ds, &empty, None, 0).is_err());
        let no_leak = Scene {
            leakage: None,
            ..scene.clone()
        };
        assert!(run_sweep(&no_leak, &ds, &SweepSpec::default(), None, 0).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let scene = static_scene(2);
        let spec = SweepSpec {
            s_values: vec![50.0],
            ratio_values: vec![0.5],
            trials: 1,
            ..SweepSpec::default()
        };
        let ds: Vec<Box<dyn Denoiser>> = vec![Box::new(Identity)];
        let g = run_sweep(&scene, &ds, &spec, None, 5).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "S_m,ratio,denoiser,trial,psnr,ssim");
        assert!(lines[1].starts_with("50,0.5,identity,0,"));
    }
}
