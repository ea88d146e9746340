//! Full-reference quality metrics, leakage-robustness regression and the
//! parameter sweep.

mod ssim;
pub mod sweep;

pub use ssim::{gaussian_taps, ssim, DATA_RANGE, K1, K2, SIGMA, WINDOW};
pub use sweep::{run_sweep, SweepCell, SweepGrid, SweepSpec, SweepTrial};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSequence};

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

fn squared_error(x: &Frame, y: &Frame) -> Result<f64> {
    x.check_shape(y)?;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Mean squared error with unit peak, values above 1 kept as they are.
pub fn mse(x: &Frame, y: &Frame) -> Result<f64> {
    Ok(squared_error(x, y)? / x.len() as f64)
}

pub fn psnr(x: &Frame, y: &Frame) -> Result<f64> {
    mse(x, y).map(psnr_from_mse)
}

/// PSNR of the MSE pooled over every pixel of every frame.
pub fn psnr_sequence(x: &VideoSequence, y: &VideoSequence) -> Result<f64> {
    x.check_compatible(y)?;
    let mut total = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        total += squared_error(a, b)?;
    }
    let n = x.len() * x.width() * x.height();
    Ok(psnr_from_mse(total / n as f64))
}

/// Mean of the per-frame SSIM values.
pub fn ssim_sequence(x: &VideoSequence, y: &VideoSequence) -> Result<f64> {
    x.check_compatible(y)?;
    let mut total = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        total += ssim(a, b)?;
    }
    Ok(total / x.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_frame: Option<Vec<FrameMetrics>>,
}

/// Scores `estimate` against `truth`; `per_frame` adds the frame series.
pub fn evaluate(
    estimate: &VideoSequence,
    truth: &VideoSequence,
    per_frame: bool,
) -> Result<MetricsReport> {
    let psnr = psnr_sequence(estimate, truth)?;
    let ssim = ssim_sequence(estimate, truth)?;
    let per_frame = if per_frame {
        Some(
            estimate
                .iter()
                .zip(truth.iter())
                .map(|(a, b)| {
                    Ok(FrameMetrics {
                        psnr: self::psnr(a, b)?,
                        ssim: self::ssim(a, b)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(MetricsReport {
        psnr,
        ssim,
        per_frame,
    })
}

/// Least-squares line of PSNR against the leakage ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessFit {
    pub m_lll: f64,
    pub b_lll: f64,
    pub r_squared: f64,
}

/// Ordinary least squares over `(L_m / S_m, PSNR)` points.
///
/// `r_squared` is 1 when every point lies on the line, including the case
/// of constant PSNR.
pub fn fit_m_lll(points: &[(f64, f64)]) -> Result<RobustnessFit> {
    if points.len() < 2 {
        return Err(Error::param("robustness fit needs at least two points"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::param("robustness fit points must be finite"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("all abscissae identical".into()));
    }
    let m = sxy / sxx;
    let b = my - m * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - (m * p.0 + b)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    // Rounding can push tiny residuals of an exact fit slightly above zero.
    let scale = ss_tot.max(points.iter().map(|p| p.1 * p.1).sum::<f64>());
    let r_squared = if ss_res <= 1e-24 * scale.max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RobustnessFit {
        m_lll: m,
        b_lll: b,
        r_squared,
    })
}
