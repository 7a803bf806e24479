//! Procedural RGB scenes and their pseudo-thermal renderings, used as a
//! stand-in dataset for desk-scale training runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{TEST_RGB, TEST_THERMAL, TRAIN_RGB, TRAIN_THERMAL};
use super::image_io::save_png;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Colormap stops, from cold to hot.
const COLORMAP: [[f32; 3]; 5] = [
    [0.0, 0.0, 0.02],
    [0.34, 0.06, 0.43],
    [0.80, 0.22, 0.26],
    [0.98, 0.60, 0.05],
    [0.99, 1.00, 0.64],
];

/// RGB palette stops for scene intensity; luminance rises strictly along it.
const SCENE_PALETTE: [[f32; 3]; 5] = [
    [0.05, 0.10, 0.20],
    [0.20, 0.35, 0.25],
    [0.55, 0.45, 0.30],
    [0.80, 0.70, 0.45],
    [0.95, 0.95, 0.85],
];

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn lookup(stops: &[[f32; 3]], t: f32) -> [f32; 3] {
    let pos = t.clamp(0.0, 1.0) * (stops.len() - 1) as f32;
    let k = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - k as f32;
    std::array::from_fn(|c| stops[k][c] * (1.0 - f) + stops[k + 1][c] * f)
}

/// Random scene: an intensity field made of a cool vertical gradient with a
/// handful of warm discs and rectangles on top, colored through a fixed
/// palette. Values are quantized to 8 bits.
pub fn render_scene<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Tensor {
    let plane = size * size;
    let mut field = vec![0.0f32; plane];
    let (top, bottom) = (rng.random_range(0.0..0.3), rng.random_range(0.15..0.45));
    for y in 0..size {
        let t = y as f32 / (size - 1).max(1) as f32;
        field[y * size..(y + 1) * size].fill(top * (1.0 - t) + bottom * t);
    }
    let shapes = rng.random_range(3..=6);
    let s = size as f32;
    for _ in 0..shapes {
        let level = rng.random_range(0.6..1.0);
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let r = rng.random_range(0.08 * s..0.25 * s);
        let disc = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if disc {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= 0.6 * r
                };
                if inside {
                    field[y * size + x] = level;
                }
            }
        }
    }
    let mut img = vec![0.0f32; 3 * plane];
    for (i, &v) in field.iter().enumerate() {
        let rgb = lookup(&SCENE_PALETTE, v);
        for c in 0..3 {
            img[c * plane + i] = quantize(rgb[c]);
        }
    }
    Tensor::new(Shape::new(1, 3, size, size).expect("positive size"), img).expect("scene length")
}

/// Maps luminance through a fixed cold-to-hot colormap.
pub fn pseudo_thermal(rgb: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = rgb.shape().dims();
    if n != 1 || c != 3 {
        return Err(Error::InvalidShape {
            op: "pseudo_thermal",
            reason: format!("expected a 1x3xHxW image, got {}", rgb.shape()),
        });
    }
    let plane = h * w;
    let d = rgb.data();
    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let lum = 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i];
        let heat = lookup(&COLORMAP, lum);
        for ch in 0..3 {
            out[ch * plane + i] = quantize(heat[ch]);
        }
    }
    Tensor::new(rgb.shape(), out)
}

/// Writes `<root>/{trainA,trainB,testA,testB}` with `n_train` and `n_test`
/// scenes. File names match across the RGB and thermal folders.
pub fn write_dataset(root: &Path, n_train: usize, n_test: usize, size: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (count, rgb_dir, th_dir) in [(n_train, TRAIN_RGB, TRAIN_THERMAL), (n_test, TEST_RGB, TEST_THERMAL)] {
        let (a, b) = (root.join(rgb_dir), root.join(th_dir));
        for d in [&a, &b] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for i in 0..count {
            let scene = render_scene(size, &mut rng);
            let name = format!("scene_{i:04}.png");
            save_png(&scene, &a.join(&name))?;
            save_png(&pseudo_thermal(&scene)?, &b.join(&name))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let a = render_scene(16, &mut ChaCha8Rng::seed_from_u64(4));
        let b = render_scene(16, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn thermal_of_black_and_white() {
        let black = Tensor::zeros(Shape::new(1, 3, 1, 1).unwrap());
        let white = Tensor::ones(Shape::new(1, 3, 1, 1).unwrap());
        assert_eq!(pseudo_thermal(&black).unwrap().data(), &[0.0, 0.0, quantize(0.02)]);
        assert_eq!(
            pseudo_thermal(&white).unwrap().data(),
            &[quantize(0.99), 1.0, quantize(0.64)]
        );
    }
}
