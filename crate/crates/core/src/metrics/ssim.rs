//! Structural similarity with an 11x11 Gaussian window (sigma 1.5),
//! `K1 = 0.01`, `K2 = 0.03` and unit dynamic range. Local statistics are
//! taken only where the window fits inside the frame, and the score is the
//! mean of the local SSIM map.

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DATA_RANGE: f64 = 1.0;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Valid-mode separable filtering of a raw buffer.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps
                .iter()
                .zip(&row[x..x + WINDOW])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * horiz[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

#[inline]
pub(crate) fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    let c1 = (K1 * DATA_RANGE).powi(2);
    let c2 = (K2 * DATA_RANGE).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn ssim(x: &Frame, y: &Frame) -> Result<f64> {
    x.check_shape(y)?;
    let (w, h) = x.shape();
    if w < WINDOW || h < WINDOW {
        return Err(Error::param(format!(
            "SSIM needs frames of at least {WINDOW}x{WINDOW}, got {w}x{h}"
        )));
    }
    let taps = gaussian_taps();
    let xx: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data().iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x.data(), w, h, &taps);
    let mu_y = filter_valid(y.data(), w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);

    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            ssim_from_moments(
                mx,
                my,
                e_xx[i] - mx * mx,
                e_yy[i] - my * my,
                e_xy[i] - mx * my,
            )
        })
        .sum();
    Ok(total / n as f64)
}
