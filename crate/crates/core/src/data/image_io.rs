use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Decodes a PNG or JPEG file into a `1x3xHxW` tensor with values `byte / 255`.
/// Grayscale and alpha images are converted to three-channel RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let shape = Shape::new(1, 3, h, w).map_err(|_| Error::Decode {
        path: path.to_path_buf(),
        reason: "empty image".into(),
    })?;
    let mut data = vec![0.0f32; shape.numel()];
    let plane = h * w;
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(shape, data)
}

/// Quantizes a `[0,1]` image (values clamped) to 8-bit RGB.
pub fn to_rgb8(img: &Tensor) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let [n, c, h, w] = img.shape().dims();
    if n != 1 || c != 3 {
        return Err(Error::InvalidShape {
            op: "to_rgb8",
            reason: format!("expected a 1x3xHxW image, got {}", img.shape()),
        });
    }
    let plane = h * w;
    let d = img.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(d[i]), q(d[plane + i]), q(d[2 * plane + i])])
    }))
}

/// Writes a `[0,1]` image as 8-bit PNG.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    let buf = to_rgb8(img)?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_png_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        ImageBuffer::from_pixel(2, 2, Rgb([255u8, 255, 255])).save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape().dims(), [1, 3, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn byte_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        image::GrayImage::from_pixel(3, 1, image::Luma([128u8])).save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape().dims(), [1, 3, 1, 3]);
        assert!(t.data().iter().all(|&v| (v - 0.50196).abs() < 1e-5));
    }

    #[test]
    fn non_image_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.png");
        std::fs::write(&path, b"definitely not a png").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
        assert!(err.to_string().contains("notes.png"));
    }

    #[test]
    fn missing_file_rejected_with_path() {
        let err = load_image(Path::new("/nonexistent/frame.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/frame.png"));
    }

    #[test]
    fn png_round_trip_is_exact_for_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let t = Tensor::from_fn(Shape::new(1, 3, 4, 5).unwrap(), |i| ((i * 37) % 256) as f32 / 255.0);
        save_png(&t, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), t);
    }
}
