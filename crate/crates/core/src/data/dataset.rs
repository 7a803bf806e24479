use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::load_image;
use super::transform::{augment, geometry_normalize, to_model_range, Augment, CropMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Subdirectory names under a dataset root.
pub const TRAIN_RGB: &str = "trainA";
pub const TRAIN_THERMAL: &str = "trainB";
pub const TEST_RGB: &str = "testA";
pub const TEST_THERMAL: &str = "testB";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pairing {
    #[default]
    Unpaired,
    PairedByName,
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::Unpaired => "unpaired",
            Pairing::PairedByName => "paired_by_name",
        })
    }
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unpaired" => Ok(Pairing::Unpaired),
            "paired_by_name" => Ok(Pairing::PairedByName),
            other => Err(Error::Config(format!("unknown pairing `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Rgb,
    Thermal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub rgb_dir: PathBuf,
    pub thermal_dir: PathBuf,
    pub image_size: usize,
    pub crop: CropMode,
    pub augment: Augment,
    pub pairing: Pairing,
    pub seed: u64,
    /// Prefetch worker threads; `0` and `1` both load on the calling thread.
    pub workers: usize,
}

impl DatasetConfig {
    /// Unpaired training view of `<root>/trainA` and `<root>/trainB`.
    pub fn training(root: &Path, image_size: usize, seed: u64) -> Self {
        DatasetConfig {
            rgb_dir: root.join(TRAIN_RGB),
            thermal_dir: root.join(TRAIN_THERMAL),
            image_size,
            crop: CropMode::CenterSquare,
            augment: Augment::default(),
            pairing: Pairing::Unpaired,
            seed,
            workers: 4,
        }
    }

    /// Paired, unaugmented view of `<root>/testA` and `<root>/testB`.
    pub fn evaluation(root: &Path, image_size: usize) -> Self {
        DatasetConfig {
            rgb_dir: root.join(TEST_RGB),
            thermal_dir: root.join(TEST_THERMAL),
            image_size,
            crop: CropMode::CenterSquare,
            augment: Augment::none(),
            pairing: Pairing::PairedByName,
            seed: 0,
            workers: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1x3xSxS`, values in `[-1, 1]`.
    pub image: Tensor,
    pub path: PathBuf,
    pub domain: Domain,
}

pub fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false)
}

/// Image files directly inside `dir`, sorted lexicographically.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Index of both image domains with deterministic per-epoch ordering.
#[derive(Clone, Debug)]
pub struct Dataset {
    cfg: DatasetConfig,
    rgb: Vec<PathBuf>,
    thermal: Vec<PathBuf>,
}

impl Dataset {
    pub fn open(cfg: DatasetConfig) -> Result<Self> {
        if cfg.image_size == 0 {
            return Err(Error::Dataset("image size must be positive".into()));
        }
        let rgb = list_images(&cfg.rgb_dir)?;
        let thermal = list_images(&cfg.thermal_dir)?;
        for (files, dir) in [(&rgb, &cfg.rgb_dir), (&thermal, &cfg.thermal_dir)] {
            if files.is_empty() {
                return Err(Error::Dataset(format!("no PNG/JPEG images in {}", dir.display())));
            }
        }
        if cfg.pairing == Pairing::PairedByName {
            let a: Vec<String> = rgb.iter().map(|p| stem(p)).collect();
            let b: Vec<String> = thermal.iter().map(|p| stem(p)).collect();
            if a != b {
                let only_a: Vec<&String> = a.iter().filter(|n| !b.contains(n)).collect();
                let only_b: Vec<&String> = b.iter().filter(|n| !a.contains(n)).collect();
                return Err(Error::Dataset(format!(
                    "paired mode needs matching basenames; only in {}: {only_a:?}; only in {}: {only_b:?}",
                    cfg.rgb_dir.display(),
                    cfg.thermal_dir.display()
                )));
            }
        }
        Ok(Dataset { cfg, rgb, thermal })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.cfg
    }

    pub fn rgb_files(&self) -> &[PathBuf] {
        &self.rgb
    }

    pub fn thermal_files(&self) -> &[PathBuf] {
        &self.thermal
    }

    /// Pairs per epoch: `max(|X|, |Y|)` unpaired, `|X|` paired.
    pub fn epoch_len(&self) -> usize {
        match self.cfg.pairing {
            Pairing::Unpaired => self.rgb.len().max(self.thermal.len()),
            Pairing::PairedByName => self.rgb.len(),
        }
    }

    /// The `(rgb index, thermal index)` sequence of one epoch.
    pub fn epoch_plan(&self, epoch: u64) -> Vec<(usize, usize)> {
        match self.cfg.pairing {
            Pairing::PairedByName => (0..self.rgb.len()).map(|i| (i, i)).collect(),
            Pairing::Unpaired => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, epoch, 0));
                let mut px: Vec<usize> = (0..self.rgb.len()).collect();
                let mut py: Vec<usize> = (0..self.thermal.len()).collect();
                px.shuffle(&mut rng);
                py.shuffle(&mut rng);
                (0..self.epoch_len())
                    .map(|k| (px[k % px.len()], py[k % py.len()]))
                    .collect()
            }
        }
    }

    /// Loads, normalizes and (in unpaired mode) augments one sample.
    pub fn load_sample(&self, domain: Domain, index: usize, aug_seed: u64) -> Result<Sample> {
        let path = match domain {
            Domain::Rgb => &self.rgb[index],
            Domain::Thermal => &self.thermal[index],
        };
        let raw = load_image(path)?;
        let mut img = geometry_normalize(&raw, self.cfg.crop, self.cfg.image_size).map_err(|e| match e {
            Error::InvalidShape { reason, .. } => Error::Dataset(format!("{}: {reason}", path.display())),
            other => other,
        })?;
        if self.cfg.pairing == Pairing::Unpaired {
            let mut rng = ChaCha8Rng::seed_from_u64(aug_seed);
            img = augment(&img, &self.cfg.augment, &mut rng)?;
        }
        Ok(Sample {
            image: to_model_range(&img)?,
            path: path.clone(),
            domain,
        })
    }

    fn load_pair(&self, epoch: u64, k: usize, (xi, yi): (usize, usize)) -> Result<(Sample, Sample)> {
        let x = self.load_sample(Domain::Rgb, xi, mix(self.cfg.seed, epoch, 2 * k as u64 + 1))?;
        let y = self.load_sample(Domain::Thermal, yi, mix(self.cfg.seed, epoch, 2 * k as u64 + 2))?;
        Ok((x, y))
    }

    /// Iterator over one epoch's `(x, y)` pairs. Items are loaded ahead by up
    /// to `workers` threads but always emitted in plan order.
    pub fn epoch(&self, epoch: u64) -> EpochIter<'_> {
        EpochIter {
            dataset: self,
            epoch,
            plan: self.epoch_plan(epoch),
            next: 0,
            ready: VecDeque::new(),
        }
    }
}

/// SplitMix64-style hash of `(seed, epoch, stream)`.
fn mix(seed: u64, epoch: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct EpochIter<'a> {
    dataset: &'a Dataset,
    epoch: u64,
    plan: Vec<(usize, usize)>,
    next: usize,
    ready: VecDeque<Result<(Sample, Sample)>>,
}

impl EpochIter<'_> {
    fn refill(&mut self) {
        let workers = self.dataset.cfg.workers.max(1);
        let end = (self.next + workers).min(self.plan.len());
        let jobs: Vec<(usize, (usize, usize))> = (self.next..end).map(|k| (k, self.plan[k])).collect();
        self.next = end;
        let (ds, epoch) = (self.dataset, self.epoch);
        if jobs.len() <= 1 {
            self.ready.extend(jobs.into_iter().map(|(k, ij)| ds.load_pair(epoch, k, ij)));
            return;
        }
        let results: Vec<Result<(Sample, Sample)>> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|(k, ij)| s.spawn(move || ds.load_pair(epoch, k, ij)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("data loader thread panicked"))
                .collect()
        });
        self.ready.extend(results);
    }
}

impl Iterator for EpochIter<'_> {
    type Item = Result<(Sample, Sample)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.ready.is_empty() && self.next < self.plan.len() {
            self.refill();
        }
        self.ready.pop_front()
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.plan.len() - self.next + self.ready.len();
        (left, Some(left))
    }
}
