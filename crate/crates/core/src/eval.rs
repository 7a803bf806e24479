//! Inference, paired image metrics and loss tables.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{from_model_range, to_model_range, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::{Checkpoint, LossRecord, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    RgbToThermal,
    ThermalToRgb,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ab" | "rgb_to_thermal" => Ok(Direction::RgbToThermal),
            "ba" | "thermal_to_rgb" => Ok(Direction::ThermalToRgb),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}` (expected ab or ba)"))),
        }
    }
}

/// Translates a geometry-normalized `[0, 1]` image; the result is in `[0, 1]`.
pub fn translate(ckpt: &Checkpoint, img: &Tensor, direction: Direction) -> Result<Tensor> {
    let net = match direction {
        Direction::RgbToThermal => ckpt.generator(),
        Direction::ThermalToRgb => ckpt.inverse_generator(),
    };
    let out = net.run(&to_model_range(img)?)?;
    from_model_range(&out)
}

pub fn paired_mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_shape(b.shape(), "paired_mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// Peak signal-to-noise ratio for `[0, 1]` images; `+inf` when identical.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(paired_mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub mse: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub mean_mse: f64,
    /// Mean over images with finite PSNR; `+inf` if all were exact.
    pub mean_psnr: f64,
    pub config: TrainConfig,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "inf".to_string()
    }
}

impl EvalReport {
    pub fn from_scores(images: Vec<ImageScore>, config: TrainConfig) -> Self {
        let n = images.len().max(1) as f64;
        let mean_mse = images.iter().map(|s| s.mse).sum::<f64>() / n;
        let finite: Vec<f64> = images.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
        let mean_psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        EvalReport {
            images,
            mean_mse,
            mean_psnr,
            config,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,mse,psnr\n");
        for i in &self.images {
            let _ = writeln!(s, "{},{:.8},{}", i.name, i.mse, fmt_psnr(i.psnr));
        }
        let _ = writeln!(s, "mean,{:.8},{}", self.mean_mse, fmt_psnr(self.mean_psnr));
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images evaluated: {}", self.images.len());
        let _ = writeln!(s, "mean MSE: {:.6}", self.mean_mse);
        let _ = writeln!(s, "mean PSNR (dB): {}", fmt_psnr(self.mean_psnr));
        s.push_str("config:\n");
        for line in self.config.to_text().lines() {
            let _ = writeln!(s, "  {line}");
        }
        s
    }

    /// Writes `<path>` as CSV and `<path>.txt` as the text summary.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let txt = path.with_extension("txt");
        std::fs::write(&txt, self.summary()).map_err(|e| Error::io(&txt, e))
    }
}

/// Scores `G(x)` against the paired thermal image for every pair in `dataset`.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset) -> Result<EvalReport> {
    let g = ckpt.generator();
    let mut scores = Vec::new();
    for pair in dataset.epoch(0) {
        let (x, y) = pair?;
        let fake = from_model_range(&g.run(&x.image)?)?;
        let real = from_model_range(&y.image)?;
        let mse = paired_mse(&fake, &real)?;
        let name = x
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        scores.push(ImageScore {
            name,
            mse,
            psnr: psnr_from_mse(mse),
        });
    }
    Ok(EvalReport::from_scores(scores, ckpt.config.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrendSummary {
    pub g_decreased: bool,
    pub d_increased: bool,
}

fn third_means(values: &[f64]) -> Option<(f64, f64)> {
    if values.len() < 2 {
        return None;
    }
    let k = values.len().div_ceil(3);
    let head = values[..k].iter().sum::<f64>() / k as f64;
    let tail = values[values.len() - k..].iter().sum::<f64>() / k as f64;
    Some((head, tail))
}

/// Compares the mean of the first third of the records with the mean of the
/// last third (each at least one record). Fewer than two records yield no trend.
pub fn loss_trend(records: &[LossRecord]) -> TrendSummary {
    let g: Vec<f64> = records.iter().map(|r| r.generator_loss).collect();
    let d: Vec<f64> = records.iter().map(|r| r.discriminator_loss).collect();
    TrendSummary {
        g_decreased: third_means(&g).is_some_and(|(a, b)| b < a),
        d_increased: third_means(&d).is_some_and(|(a, b)| b > a),
    }
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("epoch,generator_loss,discriminator_loss\n");
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.generator_loss, r.discriminator_loss);
    }
    s
}

pub fn write_loss_csv(records: &[LossRecord], path: &Path) -> Result<()> {
    std::fs::write(path, loss_csv(records)).map_err(|e| Error::io(path, e))
}

/// Writes the loss table as CSV and returns its trend.
pub fn export_loss_table(records: &[LossRecord], path: &Path) -> Result<TrendSummary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("loss table needs at least one record".into()));
    }
    write_loss_csv(records, path)?;
    Ok(loss_trend(records))
}
