//! Gain calibration from phantom video and read-noise characterization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSequence};

/// Pixels whose temporal mean falls below this are left out of the gain.
pub const MEAN_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GainEstimate {
    pub k_mean: f64,
    /// Per-pixel `Var / Mean`; zero outside the ROI and at excluded pixels.
    pub per_pixel_k: Frame,
    /// ROI pixels that contributed to `k_mean`.
    pub roi_count: usize,
}

impl GainEstimate {
    pub fn inv_k(&self) -> f64 {
        1.0 / self.k_mean
    }
}

/// The `gain.json` artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainReport {
    #[serde(rename = "K_mean")]
    pub k_mean: f64,
    #[serde(rename = "inv_K")]
    pub inv_k: f64,
    pub roi_count: usize,
}

impl From<&GainEstimate> for GainReport {
    fn from(g: &GainEstimate) -> Self {
        GainReport {
            k_mean: g.k_mean,
            inv_k: g.inv_k(),
            roi_count: g.roi_count,
        }
    }
}

/// Temporal mean and unbiased variance of every pixel.
fn temporal_moments(video: &VideoSequence) -> (Vec<f64>, Vec<f64>) {
    let n = video.len() as f64;
    let npx = video.width() * video.height();
    let mut mean = vec![0.0; npx];
    for f in video {
        mean.iter_mut().zip(f.data()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; npx];
    for f in video {
        var.iter_mut()
            .zip(f.data())
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    var.iter_mut().for_each(|s| *s /= n - 1.0);
    (mean, var)
}

/// Estimates the gain as temporal variance over temporal mean per pixel,
/// averaged over the active ROI pixels.
pub fn estimate_gain(video: &VideoSequence, roi_mask: &Frame) -> Result<GainEstimate> {
    if video.len() < 2 {
        return Err(Error::param("gain estimation needs at least two frames"));
    }
    if roi_mask.shape() != video.shape() {
        return Err(Error::ShapeMismatch {
            expected: video.shape(),
            actual: roi_mask.shape(),
        });
    }
    if !roi_mask.data().iter().any(|&m| m > 0.5) {
        return Err(Error::param("ROI mask is empty"));
    }
    let (mean, var) = temporal_moments(video);
    let mut per_pixel = vec![0.0; mean.len()];
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..mean.len() {
        if roi_mask.data()[i] <= 0.5 || mean[i] < MEAN_EPSILON {
            continue;
        }
        let k = var[i] / mean[i];
        per_pixel[i] = k;
        sum += k;
        count += 1;
    }
    if count == 0 || sum <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok(GainEstimate {
        k_mean: sum / count as f64,
        per_pixel_k: Frame::from_vec(video.width(), video.height(), per_pixel)?,
        roi_count: count,
    })
}

/// Axis-aligned ROI rectangle in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

pub fn load_rois(path: impl AsRef<Path>) -> Result<Vec<RoiRect>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Rasterizes rectangles into a `{0, 1}` mask; rectangles must fit.
pub fn roi_mask(rects: &[RoiRect], width: usize, height: usize) -> Result<Frame> {
    let mut mask = Frame::zeros(width, height);
    for r in rects {
        if r.width == 0 || r.height == 0 || r.x + r.width > width || r.y + r.height > height {
            return Err(Error::param(format!(
                "ROI {r:?} does not fit a {width}x{height} frame"
            )));
        }
        for y in r.y..r.y + r.height {
            for x in r.x..r.x + r.width {
                mask.set(x, y, 1.0);
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlickerReport {
    pub per_frame_means: Vec<f64>,
    /// `[low, high]`.
    pub centers: [f64; 2],
    /// 0 for the low mode, 1 for the high mode.
    pub assignments: Vec<u8>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn assign(values: &[f64], centers: [f64; 2]) -> Vec<u8> {
    values
        .iter()
        .map(|v| u8::from((v - centers[1]).abs() < (v - centers[0]).abs()))
        .collect()
}

/// Splits the per-frame means of a dark video into two modes with 1-D
/// Lloyd iterations started at the 25th and 75th percentiles. Ties go to
/// the low mode.
pub fn flicker_split(dark: &VideoSequence) -> Result<FlickerReport> {
    if dark.len() < 4 {
        return Err(Error::param("flicker analysis needs at least four frames"));
    }
    let means: Vec<f64> = dark.iter().map(Frame::mean).collect();
    // Sorting first makes every sum independent of frame order.
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let mut centers = [percentile(&sorted, 0.25), percentile(&sorted, 0.75)];
    let mut labels = assign(&sorted, centers);
    for _ in 0..1000 {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = sorted
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l as usize == c)
                .map(|(v, _)| *v)
                .collect();
            if !members.is_empty() {
                *center = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let next = assign(&sorted, centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    if centers[0] > centers[1] {
        centers.swap(0, 1);
    }
    Ok(FlickerReport {
        assignments: assign(&means, centers),
        per_frame_means: means,
        centers,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadNoiseStats {
    pub per_pixel_mean: Frame,
    pub per_pixel_std: Frame,
}

/// Temporal mean and sample standard deviation of a dark video.
pub fn read_noise_stats(dark: &VideoSequence) -> Result<ReadNoiseStats> {
    if dark.len() < 2 {
        return Err(Error::param(
            "read-noise statistics need at least two frames",
        ));
    }
    let (mean, var) = temporal_moments(dark);
    let (w, h) = dark.shape();
    Ok(ReadNoiseStats {
        per_pixel_mean: Frame::from_vec(w, h, mean)?,
        per_pixel_std: Frame::from_vec(w, h, var.into_iter().map(f64::sqrt).collect())?,
    })
}
