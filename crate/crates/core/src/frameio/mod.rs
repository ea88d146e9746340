//! Frame sequence persistence and synthetic scene generation.
//!
//! Sequences live in a directory, either as one 16-bit grayscale PNG per
//! frame (`frame_000000.png`, ...) or as a single little-endian `f32` planar
//! file `frames.f32`. Both layouts carry a `frames.json` sidecar with the
//! dimensions; for the PNG layout it is optional on load.

mod manifest;
mod synth;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ChannelTag, Frame, VideoSequence};

pub use manifest::{DatasetManifest, ManifestEntry, MANIFEST_FORMAT_VERSION};
pub use synth::{generate_synthetic_scene, ReferenceTexture, SceneSpec};

pub const SIDECAR_NAME: &str = "frames.json";
pub const RAW_NAME: &str = "frames.f32";
pub const DEFAULT_FPS: f64 = 30.0;

const U16_MAX: f64 = 65535.0;
const U8_MAX: f64 = 255.0;

/// On-disk layout for [`save_sequence`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    Png16,
    RawF32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    width: usize,
    height: usize,
    frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_tag: Option<ChannelTag>,
}

/// The channels of one scene that the simulator and denoisers consume.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub clean: VideoSequence,
    pub reference: VideoSequence,
    pub leakage: Option<VideoSequence>,
}

impl Scene {
    pub fn new(
        id: impl Into<String>,
        clean: VideoSequence,
        reference: VideoSequence,
        leakage: Option<VideoSequence>,
    ) -> Result<Self> {
        clean.check_compatible(&reference)?;
        if let Some(l) = &leakage {
            clean.check_compatible(l)?;
        }
        Ok(Scene {
            id: id.into(),
            clean,
            reference,
            leakage,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// A static scene made of frame `index` repeated `n` times.
    pub fn repeat_frame(&self, index: usize, n: usize) -> Result<Scene> {
        if n == 0 || index >= self.len() {
            return Err(Error::param(format!(
                "cannot repeat frame {index} of a {}-frame scene {n} times",
                self.len()
            )));
        }
        let rep = |s: &VideoSequence| {
            VideoSequence::new(vec![s.frame(index).clone(); n], s.fps(), s.tag())
        };
        Ok(Scene {
            id: format!("{}#repeat{index}", self.id),
            clean: rep(&self.clean)?,
            reference: rep(&self.reference)?,
            leakage: self.leakage.as_ref().map(rep).transpose()?,
        })
    }
}

/// Loads a sequence from a frame directory or a raw `.f32` file.
pub fn load_sequence(path: impl AsRef<Path>, tag: ChannelTag) -> Result<VideoSequence> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let seq = if path.is_file() {
        if path.extension().and_then(|e| e.to_str()) != Some("f32") {
            return Err(Error::format(
                path,
                "expected a frame directory or a .f32 file",
            ));
        }
        load_raw(path, &path.with_extension("json"), tag)?
    } else if path.join(RAW_NAME).is_file() {
        load_raw(&path.join(RAW_NAME), &path.join(SIDECAR_NAME), tag)?
    } else {
        load_png_dir(path, tag)?
    };

    let (lo, hi) = tag.value_range();
    for frame in &seq {
        let (min, max) = frame.min_max();
        if min < lo || max > hi {
            return Err(Error::format(
                path,
                format!("{tag} values span [{min}, {max}], outside [{lo}, {hi}]"),
            ));
        }
    }
    Ok(seq)
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn load_raw(raw: &Path, sidecar: &Path, tag: ChannelTag) -> Result<VideoSequence> {
    let meta = read_sidecar(sidecar)?;
    let bytes = fs::read(raw).map_err(|e| Error::io(raw, e))?;
    let plane = meta.width * meta.height;
    if meta.frames == 0 || plane == 0 {
        return Err(Error::format(sidecar, "empty sequence"));
    }
    if bytes.len() != plane * meta.frames * 4 {
        return Err(Error::format(
            raw,
            format!(
                "{} bytes, sidecar declares {}x{}x{} f32 values",
                bytes.len(),
                meta.width,
                meta.height,
                meta.frames
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let frames = values
        .chunks_exact(plane)
        .map(|p| Frame::from_vec(meta.width, meta.height, p.to_vec()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(raw, e.to_string()))?;
    VideoSequence::new(frames, meta.fps.unwrap_or(DEFAULT_FPS), tag)
}

/// Parses `frame_<digits>.png`.
fn frame_number(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn load_png_dir(dir: &Path, tag: ChannelTag) -> Result<VideoSequence> {
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(n) = name.to_str().and_then(frame_number) {
            numbered.push((n, entry.path()));
        }
    }
    if numbered.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no frame_*.png files"),
        ));
    }
    numbered.sort();
    for pair in numbered.windows(2) {
        if pair[1].0 != pair[0].0 + 1 {
            return Err(Error::format(
                dir,
                format!(
                    "non-monotone frame numbering: {} follows {}",
                    pair[1].1.display(),
                    pair[0].1.display()
                ),
            ));
        }
    }

    let frames = numbered
        .iter()
        .map(|(_, p)| decode_png(p, tag))
        .collect::<Result<Vec<_>>>()?;
    let first = &frames[0];
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.shape() != first.shape())
    {
        return Err(Error::format(
            &numbered[i].1,
            format!(
                "inconsistent dimensions: {:?} vs {:?}",
                f.shape(),
                first.shape()
            ),
        ));
    }
    let sidecar = dir.join(SIDECAR_NAME);
    let fps = if sidecar.is_file() {
        read_sidecar(&sidecar)?.fps.unwrap_or(DEFAULT_FPS)
    } else {
        DEFAULT_FPS
    };
    VideoSequence::new(frames, fps, tag)
}

#[inline]
fn rec601(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn decode_png(path: &Path, tag: ChannelTag) -> Result<Frame> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / U16_MAX)
            .collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| rec601(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / U16_MAX)
            .collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| rec601(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / U16_MAX)
            .collect(),
        DynamicImage::ImageLuma8(buf) if tag == ChannelTag::Reference => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / U8_MAX)
            .collect(),
        DynamicImage::ImageRgb8(buf) if tag == ChannelTag::Reference => buf
            .pixels()
            .map(|p| rec601(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / U8_MAX)
            .collect(),
        DynamicImage::ImageRgba8(buf) if tag == ChannelTag::Reference => buf
            .pixels()
            .map(|p| rec601(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / U8_MAX)
            .collect(),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported pixel layout {:?} for {tag}", other.color()),
            ))
        }
    };
    Frame::from_vec(w, h, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `seq` into directory `dir` in the requested layout.
///
/// The PNG layout only holds values in `[0, 1]`; anything outside is
/// rejected rather than clipped.
pub fn save_sequence(
    seq: &VideoSequence,
    dir: impl AsRef<Path>,
    format: FrameFormat,
) -> Result<()> {
    let dir = dir.as_ref();
    if format == FrameFormat::Png16 {
        for (t, frame) in seq.iter().enumerate() {
            let (min, max) = frame.min_max();
            if min < 0.0 || max > 1.0 {
                return Err(Error::param(format!(
                    "frame {t} spans [{min}, {max}]; 16-bit PNG holds [0, 1], use raw f32"
                )));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    match format {
        FrameFormat::Png16 => {
            for (t, frame) in seq.iter().enumerate() {
                let path = dir.join(format!("frame_{t:06}.png"));
                let buf: Vec<u16> = frame
                    .data()
                    .iter()
                    .map(|&v| (v * U16_MAX).round() as u16)
                    .collect();
                let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(frame.width() as u32, frame.height() as u32, buf)
                        .expect("buffer sized from frame");
                img.save(&path).map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(&path, io),
                    other => Error::format(&path, other.to_string()),
                })?;
            }
        }
        FrameFormat::RawF32 => {
            let path = dir.join(RAW_NAME);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for frame in seq {
                for &v in frame.data() {
                    out.write_all(&(v as f32).to_le_bytes())
                        .map_err(|e| Error::io(&path, e))?;
                }
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
    }

    let sidecar = Sidecar {
        width: seq.width(),
        height: seq.height(),
        frames: seq.len(),
        fps: Some(seq.fps()),
        channel_tag: Some(seq.tag()),
    };
    let path = dir.join(SIDECAR_NAME);
    let text = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
