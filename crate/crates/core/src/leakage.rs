//! Laser-leakage prediction from the reference video.
//!
//! Predictors map a reference frame to the leakage frame it implies. The
//! fitted kinds are median-seeking: coefficients minimise the L1 residual,
//! so a two-level flicker in the training leakage pulls the offset to the
//! majority level rather than the average.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSequence};

pub const IRLS_ITERATIONS: usize = 20;
pub const IRLS_WEIGHT_FLOOR: f64 = 1e-6;
pub const PATCH_GRID: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Oracle,
    Affine,
    PatchAffine,
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(PredictorKind::Oracle),
            "affine" => Ok(PredictorKind::Affine),
            "patch_affine" | "patch-affine" => Ok(PredictorKind::PatchAffine),
            other => Err(Error::param(format!("unknown predictor kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCoeffs {
    pub gain: f64,
    pub offset: f64,
}

impl AffineCoeffs {
    pub const ZERO: AffineCoeffs = AffineCoeffs {
        gain: 0.0,
        offset: 0.0,
    };

    #[inline]
    fn apply(&self, r: f64) -> f64 {
        (self.gain * r + self.offset).clamp(0.0, 1.0)
    }
}

/// A fitted or oracle leakage predictor, serialized as JSON coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeakagePredictor {
    /// Passes the ground-truth leakage channel through.
    Oracle,
    Affine {
        gain: f64,
        offset: f64,
    },
    /// One `(gain, offset)` per cell of a `grid x grid` tiling, row-major.
    PatchAffine {
        grid: usize,
        coeffs: Vec<AffineCoeffs>,
    },
}

impl LeakagePredictor {
    pub fn zero() -> Self {
        LeakagePredictor::Affine {
            gain: 0.0,
            offset: 0.0,
        }
    }

    pub fn kind(&self) -> PredictorKind {
        match self {
            LeakagePredictor::Oracle => PredictorKind::Oracle,
            LeakagePredictor::Affine { .. } => PredictorKind::Affine,
            LeakagePredictor::PatchAffine { .. } => PredictorKind::PatchAffine,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LeakagePredictor::Oracle => Ok(()),
            LeakagePredictor::Affine { gain, offset } => {
                if gain.is_finite() && offset.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("affine coefficients must be finite"))
                }
            }
            LeakagePredictor::PatchAffine { grid, coeffs } => {
                if *grid == 0 || coeffs.len() != grid * grid {
                    return Err(Error::param(format!(
                        "patch predictor needs {}x{} coefficient pairs, has {}",
                        grid,
                        grid,
                        coeffs.len()
                    )));
                }
                if coeffs
                    .iter()
                    .any(|c| !(c.gain.is_finite() && c.offset.is_finite()))
                {
                    return Err(Error::param("patch coefficients must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: LeakagePredictor =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Predicted leakage for `reference`, always in `[0, 1]`.
    pub fn predict(&self, reference: &Frame, oracle_leakage: Option<&Frame>) -> Result<Frame> {
        match self {
            LeakagePredictor::Oracle => {
                let l = oracle_leakage.ok_or_else(|| {
                    Error::MissingChannel("oracle predictor needs the leakage channel".into())
                })?;
                reference.check_shape(l)?;
                Ok(l.clone())
            }
            LeakagePredictor::Affine { gain, offset } => {
                let c = AffineCoeffs {
                    gain: *gain,
                    offset: *offset,
                };
                Ok(reference.map(|r| c.apply(r)))
            }
            LeakagePredictor::PatchAffine { grid, coeffs } => {
                predict_patch(*grid, coeffs, reference)
            }
        }
    }

    pub fn predict_sequence(
        &self,
        reference: &VideoSequence,
        oracle_leakage: Option<&VideoSequence>,
    ) -> Result<VideoSequence> {
        if let Some(l) = oracle_leakage {
            reference.check_compatible(l)?;
        }
        let frames = reference
            .iter()
            .enumerate()
            .map(|(t, r)| self.predict(r, oracle_leakage.map(|l| l.frame(t))))
            .collect::<Result<Vec<_>>>()?;
        VideoSequence::new(frames, reference.fps(), crate::ChannelTag::Leakage)
    }
}

/// Tile index range `[lo, hi)` of cell `i` out of `grid` along `n` pixels.
#[inline]
fn tile_bounds(i: usize, grid: usize, n: usize) -> (usize, usize) {
    (i * n / grid, (i + 1) * n / grid)
}

/// Continuous tile coordinate of pixel `x`: tile centres sit at integers.
#[inline]
fn tile_coord(x: usize, grid: usize, n: usize) -> (usize, usize, f64) {
    let tile = n as f64 / grid as f64;
    let u = ((x as f64 + 0.5) / tile - 0.5).clamp(0.0, (grid - 1) as f64);
    let i0 = (u.floor() as usize).min(grid - 1);
    let i1 = (i0 + 1).min(grid - 1);
    (i0, i1, u - i0 as f64)
}

fn predict_patch(grid: usize, coeffs: &[AffineCoeffs], reference: &Frame) -> Result<Frame> {
    let (w, h) = reference.shape();
    if w < grid || h < grid {
        return Err(Error::param(format!(
            "frame {w}x{h} is smaller than the {grid}x{grid} predictor grid"
        )));
    }
    let xs: Vec<_> = (0..w).map(|x| tile_coord(x, grid, w)).collect();
    let mut out = Frame::zeros(w, h);
    for y in 0..h {
        let (j0, j1, fy) = tile_coord(y, grid, h);
        for (x, &(i0, i1, fx)) in xs.iter().enumerate() {
            let c = |i: usize, j: usize| coeffs[j * grid + i];
            let blend = |f: fn(&AffineCoeffs) -> f64| {
                let top = (1.0 - fx) * f(&c(i0, j0)) + fx * f(&c(i1, j0));
                let bot = (1.0 - fx) * f(&c(i0, j1)) + fx * f(&c(i1, j1));
                (1.0 - fy) * top + fy * bot
            };
            let blended = AffineCoeffs {
                gain: blend(|c| c.gain),
                offset: blend(|c| c.offset),
            };
            out.set(x, y, blended.apply(reference.get(x, y)));
        }
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// L1 line fit `l ≈ gain * r + offset` by iteratively reweighted least
/// squares. A reference without spread yields `gain = 0` and the median of
/// `l` as offset.
pub fn fit_affine_l1(r: &[f64], l: &[f64]) -> Result<AffineCoeffs> {
    if r.is_empty() || r.len() != l.len() {
        return Err(Error::param(
            "affine fit needs equally many, and some, samples",
        ));
    }
    let n = r.len() as f64;
    let r_mean = r.iter().sum::<f64>() / n;
    let r_var = r.iter().map(|v| (v - r_mean).powi(2)).sum::<f64>() / n;
    if r_var <= 1e-18 {
        return Ok(AffineCoeffs {
            gain: 0.0,
            offset: median(&mut l.to_vec()),
        });
    }

    let mut weights = vec![1.0; r.len()];
    let mut coeffs = AffineCoeffs::ZERO;
    for _ in 0..=IRLS_ITERATIONS {
        let (mut sw, mut swr, mut swl) = (0.0, 0.0, 0.0);
        for ((&wi, &ri), &li) in weights.iter().zip(r).zip(l) {
            sw += wi;
            swr += wi * ri;
            swl += wi * li;
        }
        let (mr, ml) = (swr / sw, swl / sw);
        let (mut srr, mut srl) = (0.0, 0.0);
        for ((&wi, &ri), &li) in weights.iter().zip(r).zip(l) {
            srr += wi * (ri - mr) * (ri - mr);
            srl += wi * (ri - mr) * (li - ml);
        }
        let gain = if srr > 0.0 { srl / srr } else { 0.0 };
        coeffs = AffineCoeffs {
            gain,
            offset: ml - gain * mr,
        };
        for ((wi, &ri), &li) in weights.iter_mut().zip(r).zip(l) {
            let res = (coeffs.gain * ri + coeffs.offset - li).abs();
            *wi = 1.0 / res.max(IRLS_WEIGHT_FLOOR);
        }
    }
    Ok(coeffs)
}

/// Fits a predictor of `kind` to `(reference, noisy leakage)` frame pairs.
pub fn fit_predictor(pairs: &[(Frame, Frame)], kind: PredictorKind) -> Result<LeakagePredictor> {
    if pairs.is_empty() {
        return Err(Error::param("no training pairs"));
    }
    let shape = pairs[0].0.shape();
    for (r, l) in pairs {
        r.check_shape(l)?;
        if r.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: r.shape(),
            });
        }
    }
    match kind {
        PredictorKind::Oracle => Err(Error::param("the oracle predictor is not fitted")),
        PredictorKind::Affine => {
            let r: Vec<f64> = pairs
                .iter()
                .flat_map(|(r, _)| r.data().iter().copied())
                .collect();
            let l: Vec<f64> = pairs
                .iter()
                .flat_map(|(_, l)| l.data().iter().copied())
                .collect();
            let c = fit_affine_l1(&r, &l)?;
            Ok(LeakagePredictor::Affine {
                gain: c.gain,
                offset: c.offset,
            })
        }
        PredictorKind::PatchAffine => {
            let (w, h) = shape;
            let grid = PATCH_GRID;
            if w < grid || h < grid {
                return Err(Error::param(format!(
                    "frame {w}x{h} is smaller than the {grid}x{grid} predictor grid"
                )));
            }
            let mut coeffs = Vec::with_capacity(grid * grid);
            for j in 0..grid {
                let (y0, y1) = tile_bounds(j, grid, h);
                for i in 0..grid {
                    let (x0, x1) = tile_bounds(i, grid, w);
                    let mut rs = Vec::new();
                    let mut ls = Vec::new();
                    for (r, l) in pairs {
                        for y in y0..y1 {
                            for x in x0..x1 {
                                rs.push(r.get(x, y));
                                ls.push(l.get(x, y));
                            }
                        }
                    }
                    coeffs.push(fit_affine_l1(&rs, &ls)?);
                }
            }
            Ok(LeakagePredictor::PatchAffine { grid, coeffs })
        }
    }
}

/// Fraction of leakage energy explained by a prediction:
/// `1 - ||noisy - predicted|| / ||noisy||` over the whole sequence.
pub fn energy_removed(noisy_leakage: &VideoSequence, predicted: &VideoSequence) -> Result<f64> {
    noisy_leakage.check_compatible(predicted)?;
    let (mut total, mut residual) = (0.0, 0.0);
    for (n, p) in noisy_leakage.iter().zip(predicted) {
        for (&a, &b) in n.data().iter().zip(p.data()) {
            total += a * a;
            residual += (a - b) * (a - b);
        }
    }
    if total == 0.0 {
        return Err(Error::Degenerate("noisy leakage has zero energy".into()));
    }
    Ok(1.0 - (residual / total).sqrt())
}
