//! Dense motion on the reference video.
//!
//! Flow follows the backward-warping convention: `cur(x) ≈ prev(x - flow(x))`,
//! so [`warp`]ing anything aligned with `prev` by the flow aligns it with
//! `cur`. Estimation is pyramidal Lucas-Kanade over square windows with a
//! fixed number of warp-and-solve refinements per level.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

const FLO_MAGIC: &[u8; 4] = b"PIEH";

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// Horizontal displacement in pixels.
    pub u: Frame,
    /// Vertical displacement in pixels.
    pub v: Frame,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            u: Frame::zeros(width, height),
            v: Frame::zeros(width, height),
        }
    }

    /// Uniform flow.
    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            u: Frame::filled(width, height, u),
            v: Frame::filled(width, height, v),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.shape()
    }

    pub fn is_zero(&self) -> bool {
        self.u.data().iter().chain(self.v.data()).all(|&d| d == 0.0)
    }

    /// Writes a `.flo`-style dump: `PIEH`, width and height as little-endian
    /// `u32`, then the `u` and `v` planes as little-endian `f32`.
    pub fn write_flo(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = self.shape();
        let mut buf = Vec::with_capacity(12 + 8 * w * h);
        buf.extend_from_slice(FLO_MAGIC);
        buf.extend_from_slice(&(w as u32).to_le_bytes());
        buf.extend_from_slice(&(h as u32).to_le_bytes());
        for &d in self.u.data().iter().chain(self.v.data()) {
            buf.extend_from_slice(&(d as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_flo(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
            return Err(Error::format(path, "not a flow dump"));
        }
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() != 12 + 8 * w * h {
            return Err(Error::format(path, "truncated flow dump"));
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let (u, v) = vals.split_at(w * h);
        Ok(FlowField {
            u: Frame::from_vec(w, h, u.to_vec())?,
            v: Frame::from_vec(w, h, v.to_vec())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub levels: usize,
    /// Side of the square least-squares window, odd.
    pub window: usize,
    pub iterations: usize,
    pub max_displacement: f64,
    /// Windows whose structure tensor is worse conditioned than this keep
    /// the estimate propagated from the coarser level.
    pub max_condition: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 3,
            window: 7,
            iterations: 5,
            max_displacement: 32.0,
            max_condition: 1e3,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::param(format!(
                "flow levels must lie in [1, 16], got {}",
                self.levels
            )));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::param(format!(
                "flow window must be odd, got {}",
                self.window
            )));
        }
        if !(self.max_displacement > 0.0 && self.max_condition > 1.0) {
            return Err(Error::param("flow limits must be positive"));
        }
        Ok(())
    }
}

/// Bilinear sample with coordinates clamped to the frame.
#[inline]
fn sample_clamped(f: &Frame, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (f.width() - 1) as f64);
    let y = y.clamp(0.0, (f.height() - 1) as f64);
    bilinear(f, x, y)
}

/// Bilinear sample at an in-bounds position.
#[inline]
fn bilinear(f: &Frame, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(f.width() - 1);
    let y1 = (y0 + 1).min(f.height() - 1);
    let top = (1.0 - fx) * f.get(x0, y0) + fx * f.get(x1, y0);
    let bot = (1.0 - fx) * f.get(x0, y1) + fx * f.get(x1, y1);
    (1.0 - fy) * top + fy * bot
}

/// Backward bilinear warp, `out(x) = frame(x - flow(x))`, plus a per-pixel
/// flag telling whether the sample fell inside the frame. Outside samples
/// are zero.
pub fn warp_with_validity(frame: &Frame, flow: &FlowField) -> Result<(Frame, Vec<bool>)> {
    frame.check_shape(&flow.u)?;
    let (w, h) = frame.shape();
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let mut out = Frame::zeros(w, h);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 - flow.u.data()[i];
            let sy = y as f64 - flow.v.data()[i];
            if (0.0..=xmax).contains(&sx) && (0.0..=ymax).contains(&sy) {
                out.data_mut()[i] = bilinear(frame, sx, sy);
                valid[i] = true;
            }
        }
    }
    Ok((out, valid))
}

pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    warp_with_validity(frame, flow).map(|(f, _)| f)
}

fn warp_clamped(frame: &Frame, flow: &FlowField) -> Frame {
    let (w, h) = frame.shape();
    Frame::from_fn(w, h, |x, y| {
        let i = y * w + x;
        sample_clamped(
            frame,
            x as f64 - flow.u.data()[i],
            y as f64 - flow.v.data()[i],
        )
    })
}

/// 1-4-6-4-1 blur followed by dropping odd rows and columns.
fn downsample(f: &Frame) -> Frame {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = f.shape();
    let horiz = Frame::from_fn(w, h, |x, y| {
        (0..5)
            .map(|k| K[k] * f.get_clamped(x as isize + k as isize - 2, y as isize))
            .sum()
    });
    let blurred = Frame::from_fn(w, h, |x, y| {
        (0..5)
            .map(|k| K[k] * horiz.get_clamped(x as isize, y as isize + k as isize - 2))
            .sum()
    });
    Frame::from_fn(w.div_ceil(2), h.div_ceil(2), |x, y| {
        blurred.get(2 * x, 2 * y)
    })
}

fn upsample_flow(coarse: &FlowField, width: usize, height: usize) -> FlowField {
    let up = |c: &Frame| {
        Frame::from_fn(width, height, |x, y| {
            2.0 * sample_clamped(c, x as f64 / 2.0, y as f64 / 2.0)
        })
    };
    FlowField {
        u: up(&coarse.u),
        v: up(&coarse.v),
    }
}

/// Sums over a `(2r+1)^2` window, truncated at the borders.
fn box_sum(f: &Frame, r: usize) -> Frame {
    let (w, h) = f.shape();
    let mut horiz = Frame::zeros(w, h);
    for y in 0..h {
        let row = &f.data()[y * w..(y + 1) * w];
        let mut prefix = vec![0.0; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x];
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            horiz.set(x, y, prefix[hi] - prefix[lo]);
        }
    }
    let mut out = Frame::zeros(w, h);
    let mut prefix = vec![0.0; h + 1];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horiz.get(x, y);
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out.set(x, y, prefix[hi] - prefix[lo]);
        }
    }
    out
}

/// One Lucas-Kanade pass per iteration. Neighbour residuals are moved to
/// the centre pixel's flow through the linearization, so every window
/// solves for a single shared displacement; without that correction the
/// per-pixel updates amplify checkerboard patterns in the flow.
fn refine_level(prev: &Frame, cur: &Frame, flow: &mut FlowField, cfg: &FlowConfig) {
    let (w, h) = cur.shape();
    let r = cfg.window / 2;
    let n = w * h;
    for _ in 0..cfg.iterations {
        let warped = warp_clamped(prev, flow);
        let mut terms: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(n));
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                let gx = 0.25
                    * (warped.get_clamped(xi + 1, yi) - warped.get_clamped(xi - 1, yi)
                        + cur.get_clamped(xi + 1, yi)
                        - cur.get_clamped(xi - 1, yi));
                let gy = 0.25
                    * (warped.get_clamped(xi, yi + 1) - warped.get_clamped(xi, yi - 1)
                        + cur.get_clamped(xi, yi + 1)
                        - cur.get_clamped(xi, yi - 1));
                let i = y * w + x;
                let (u, v) = (flow.u.data()[i], flow.v.data()[i]);
                // Residual with the pixel's own displacement taken out.
                let it = cur.data()[i] - warped.data()[i] - gx * u - gy * v;
                terms[0].push(gx * gx);
                terms[1].push(gx * gy);
                terms[2].push(gy * gy);
                terms[3].push(gx * it);
                terms[4].push(gy * it);
            }
        }
        let [sxx, sxy, syy, sxt, syt] =
            terms.map(|v| box_sum(&Frame::from_vec(w, h, v).expect("sized"), r));

        let lim = cfg.max_displacement;
        for i in 0..n {
            let (a, b, c) = (sxx.data()[i], sxy.data()[i], syy.data()[i]);
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let (l_max, l_min) = (half_tr + disc, half_tr - disc);
            if l_min <= 1e-12 || l_max > cfg.max_condition * l_min {
                continue;
            }
            let det = a * c - b * b;
            let (bx, by) = (sxt.data()[i], syt.data()[i]);
            flow.u.data_mut()[i] = (-(c * bx - b * by) / det).clamp(-lim, lim);
            flow.v.data_mut()[i] = (-(a * by - b * bx) / det).clamp(-lim, lim);
        }
    }
}

/// Resets the flow to zero wherever zero motion explains the window
/// strictly better, which stops brightness changes from dragging the
/// iteration off to distant false matches.
fn prefer_zero_where_better(prev: &Frame, cur: &Frame, flow: &mut FlowField, cfg: &FlowConfig) {
    let (w, h) = cur.shape();
    let r = cfg.window / 2;
    let warped = warp_clamped(prev, flow);
    let sq = |a: &Frame| {
        let d = a
            .data()
            .iter()
            .zip(cur.data())
            .map(|(p, c)| (p - c) * (p - c))
            .collect();
        box_sum(&Frame::from_vec(w, h, d).expect("sized"), r)
    };
    let (moved, still) = (sq(&warped), sq(prev));
    for i in 0..w * h {
        if still.data()[i] < moved.data()[i] {
            flow.u.data_mut()[i] = 0.0;
            flow.v.data_mut()[i] = 0.0;
        }
    }
}

pub fn estimate_flow(prev_ref: &Frame, cur_ref: &Frame) -> Result<FlowField> {
    estimate_flow_with(prev_ref, cur_ref, &FlowConfig::default())
}

/// Coarse-to-fine flow from `prev_ref` to `cur_ref`.
pub fn estimate_flow_with(
    prev_ref: &Frame,
    cur_ref: &Frame,
    cfg: &FlowConfig,
) -> Result<FlowField> {
    cfg.validate()?;
    prev_ref.check_shape(cur_ref)?;
    let (w, h) = cur_ref.shape();
    let min_side = 1usize << cfg.levels;
    if w < min_side || h < min_side {
        return Err(Error::param(format!(
            "frames of {w}x{h} are too small for {} pyramid levels (need {min_side} per side)",
            cfg.levels
        )));
    }
    if prev_ref == cur_ref {
        return Ok(FlowField::zeros(w, h));
    }

    let mut prev_pyr = vec![prev_ref.clone()];
    let mut cur_pyr = vec![cur_ref.clone()];
    for _ in 1..cfg.levels {
        prev_pyr.push(downsample(prev_pyr.last().unwrap()));
        cur_pyr.push(downsample(cur_pyr.last().unwrap()));
    }

    let (cw, ch) = cur_pyr[cfg.levels - 1].shape();
    let mut flow = FlowField::zeros(cw, ch);
    for level in (0..cfg.levels).rev() {
        let (lw, lh) = cur_pyr[level].shape();
        if flow.shape() != (lw, lh) {
            flow = upsample_flow(&flow, lw, lh);
        }
        refine_level(&prev_pyr[level], &cur_pyr[level], &mut flow, cfg);
        prefer_zero_where_better(&prev_pyr[level], &cur_pyr[level], &mut flow, cfg);
    }
    Ok(flow)
}

/// Pixels where the warped history can be trusted.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    /// 1 where the warped previous frame agrees with the current one, 0
    /// where it is occluded or fell outside the frame.
    pub mask: Frame,
}

impl OcclusionMask {
    pub fn all_valid(width: usize, height: usize) -> Self {
        OcclusionMask {
            mask: Frame::filled(width, height, 1.0),
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        self.mask.mean()
    }
}

/// Marks pixels whose reference warp error is at most `tau` and whose warp
/// sample landed in bounds.
pub fn occlusion_mask(
    prev_ref: &Frame,
    cur_ref: &Frame,
    flow: &FlowField,
    tau: f64,
) -> Result<OcclusionMask> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::param(format!(
            "occlusion threshold must be positive, got {tau}"
        )));
    }
    prev_ref.check_shape(cur_ref)?;
    let (warped, valid) = warp_with_validity(prev_ref, flow)?;
    let data = warped
        .data()
        .iter()
        .zip(cur_ref.data())
        .zip(&valid)
        .map(|((&a, &b), &ok)| if ok && (a - b).abs() <= tau { 1.0 } else { 0.0 })
        .collect();
    Ok(OcclusionMask {
        mask: Frame::from_vec(cur_ref.width(), cur_ref.height(), data)?,
    })
}
