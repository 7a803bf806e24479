//! Geometry reconciliation, augmentation and value-range mapping.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CropMode {
    /// Central `min(H, W)` square, then resize.
    #[default]
    CenterSquare,
    /// Resize directly, changing the aspect ratio if needed.
    None,
}

impl fmt::Display for CropMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CropMode::CenterSquare => "center_square",
            CropMode::None => "none",
        })
    }
}

impl FromStr for CropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center_square" => Ok(CropMode::CenterSquare),
            "none" => Ok(CropMode::None),
            other => Err(Error::Config(format!("unknown crop mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    pub rotate: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            hflip: true,
            vflip: true,
            rotate: true,
        }
    }
}

impl Augment {
    pub fn none() -> Self {
        Augment {
            hflip: false,
            vflip: false,
            rotate: false,
        }
    }
}

pub fn center_square(img: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = img.shape().dims();
    let side = h.min(w);
    let (y0, x0) = ((h - side) / 2, (w - side) / 2);
    let mut out = Vec::with_capacity(n * c * side * side);
    for plane in img.data().chunks_exact(h * w) {
        for y in y0..y0 + side {
            out.extend_from_slice(&plane[y * w + x0..y * w + x0 + side]);
        }
    }
    Tensor::new(Shape::new(n, c, side, side)?, out)
}

/// Bilinear resampling with half-pixel centers and edge clamping. Resizing to
/// the same size is exact.
pub fn bilinear_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = img.shape().dims();
    let shape = Shape::new(n, c, out_h, out_w)?;
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Vec::with_capacity(shape.numel());
    for plane in img.data().chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(shape, out)
}

/// Brings a raw capture to the common `size x size` geometry.
pub fn geometry_normalize(img: &Tensor, crop: CropMode, size: usize) -> Result<Tensor> {
    let [_, _, h, w] = img.shape().dims();
    if h < size || w < size {
        return Err(Error::InvalidShape {
            op: "geometry_normalize",
            reason: format!("image {h}x{w} is smaller than the target size {size}"),
        });
    }
    let cropped = match crop {
        CropMode::CenterSquare => center_square(img)?,
        CropMode::None => img.clone(),
    };
    let [_, _, ch, cw] = cropped.shape().dims();
    if ch == size && cw == size {
        return Ok(cropped);
    }
    bilinear_resize(&cropped, size, size)
}

pub fn hflip(img: &Tensor) -> Tensor {
    remap(img, |y, x, _, w| (y, w - 1 - x))
}

pub fn vflip(img: &Tensor) -> Tensor {
    remap(img, |y, x, h, _| (h - 1 - y, x))
}

/// Rotates a square image by `quarter_turns * 90°` counter-clockwise.
pub fn rotate90(img: &Tensor, quarter_turns: usize) -> Tensor {
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => remap(img, |y, x, _, w| (x, w - 1 - y)),
        2 => remap(img, |y, x, h, w| (h - 1 - y, w - 1 - x)),
        _ => remap(img, |y, x, h, _| (h - 1 - x, y)),
    }
}

/// Output pixel `(y, x)` takes input pixel `src(y, x, H, W)`.
fn remap(img: &Tensor, src: impl Fn(usize, usize, usize, usize) -> (usize, usize)) -> Tensor {
    let [_, _, h, w] = img.shape().dims();
    let mut out = Vec::with_capacity(img.numel());
    for plane in img.data().chunks_exact(h * w) {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x, h, w);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Tensor::new(img.shape(), out).expect("remap preserves shape")
}

/// Random flips and quarter-turn rotation. Three draws are always taken from
/// `rng` (h-flip coin, v-flip coin, turn count) so the stream does not depend
/// on which augmentations are enabled.
pub fn augment<R: Rng + ?Sized>(img: &Tensor, cfg: &Augment, rng: &mut R) -> Result<Tensor> {
    let [_, _, h, w] = img.shape().dims();
    if h != w {
        return Err(Error::InvalidShape {
            op: "augment",
            reason: format!("augmentation expects a square image, got {h}x{w}"),
        });
    }
    let flip_h = rng.random_bool(0.5);
    let flip_v = rng.random_bool(0.5);
    let turns = rng.random_range(0..4usize);
    let mut out = img.clone();
    if cfg.hflip && flip_h {
        out = hflip(&out);
    }
    if cfg.vflip && flip_v {
        out = vflip(&out);
    }
    if cfg.rotate {
        out = rotate90(&out, turns);
    }
    Ok(out)
}

const RANGE_SLACK: f32 = 1e-6;

fn check_range(img: &Tensor, op: &'static str, lo: f32, hi: f32) -> Result<()> {
    match img
        .data()
        .iter()
        .find(|&&v| !(v >= lo - RANGE_SLACK && v <= hi + RANGE_SLACK))
    {
        Some(&value) => Err(Error::OutOfRange { op, value, lo, hi }),
        None => Ok(()),
    }
}

/// `[0, 1] -> [-1, 1]` via `2x - 1`.
pub fn to_model_range(img01: &Tensor) -> Result<Tensor> {
    check_range(img01, "to_model_range", 0.0, 1.0)?;
    Ok(img01.map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0)))
}

/// `[-1, 1] -> [0, 1]` via `(x + 1) / 2`, clamped for export.
pub fn from_model_range(img: &Tensor) -> Result<Tensor> {
    check_range(img, "from_model_range", -1.0, 1.0)?;
    Ok(img.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)))
}
