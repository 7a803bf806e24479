//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Augment, CropMode, DatasetConfig};
use crate::error::{Error, Result};
use crate::models::{default_res_blocks, DiscriminatorSpec, GeneratorSpec};
use crate::objectives::{LossMode, LossWeights};
use crate::optim::AdamHyper;
use crate::pool::DEFAULT_POOL_CAPACITY;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch: usize,
    pub lr: f32,
    pub lambda_cycle: f32,
    pub lambda_identity: f32,
    pub pool_capacity: usize,
    pub loss_mode: LossMode,
    pub image_size: usize,
    pub n_res_blocks: usize,
    /// Generator width `f` (layers use `f, 2f, 4f` filters).
    pub base_filters: usize,
    /// Discriminator width (layers use `d, 2d, 4d, 8d` filters).
    pub disc_filters: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: usize,
    pub workers: usize,
    pub crop: CropMode,
    pub hflip: bool,
    pub vflip: bool,
    pub rotate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 1,
            lr: 0.001,
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            pool_capacity: DEFAULT_POOL_CAPACITY,
            loss_mode: LossMode::LeastSquares,
            image_size: 256,
            n_res_blocks: default_res_blocks(256),
            base_filters: 64,
            disc_filters: 64,
            seed: 0,
            checkpoint_every: 10,
            log_every: 100,
            workers: 4,
            crop: CropMode::CenterSquare,
            hflip: true,
            vflip: true,
            rotate: true,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch",
    "lr",
    "lambda_cycle",
    "lambda_identity",
    "pool_capacity",
    "loss_mode",
    "image_size",
    "n_res_blocks",
    "base_filters",
    "disc_filters",
    "seed",
    "checkpoint_every",
    "log_every",
    "workers",
    "crop",
    "hflip",
    "vflip",
    "rotate",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch != 1 {
            return Err(Error::Config(format!("batch must be 1, got {}", self.batch)));
        }
        let positive = [
            ("epochs", self.epochs as usize),
            ("image_size", self.image_size),
            ("n_res_blocks", self.n_res_blocks),
            ("base_filters", self.base_filters),
            ("disc_filters", self.disc_filters),
            ("checkpoint_every", self.checkpoint_every as usize),
            ("log_every", self.log_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        self.adam().validate()?;
        self.weights().validate()?;
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper::with_lr(self.lr)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_cycle: self.lambda_cycle,
            lambda_identity: self.lambda_identity,
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            in_channels: 3,
            out_channels: 3,
            base_filters: self.base_filters,
            n_res_blocks: self.n_res_blocks,
            image_size: self.image_size,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::with_base(self.disc_filters)
    }

    pub fn augment(&self) -> Augment {
        Augment {
            hflip: self.hflip,
            vflip: self.vflip,
            rotate: self.rotate,
        }
    }

    /// Unpaired training view of `<root>/trainA`, `<root>/trainB`.
    pub fn dataset(&self, root: &Path) -> DatasetConfig {
        let mut d = DatasetConfig::training(root, self.image_size, self.seed);
        d.crop = self.crop;
        d.augment = self.augment();
        d.workers = self.workers;
        d
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lambda_cycle" => self.lambda_cycle = parse(key, value)?,
            "lambda_identity" => self.lambda_identity = parse(key, value)?,
            "pool_capacity" => self.pool_capacity = parse(key, value)?,
            "loss_mode" => self.loss_mode = value.parse()?,
            "image_size" => self.image_size = parse(key, value)?,
            "n_res_blocks" => self.n_res_blocks = parse(key, value)?,
            "base_filters" => self.base_filters = parse(key, value)?,
            "disc_filters" => self.disc_filters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "crop" => self.crop = value.parse()?,
            "hflip" => self.hflip = parse(key, value)?,
            "vflip" => self.vflip = parse(key, value)?,
            "rotate" => self.rotate = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "lr" => self.lr.to_string(),
            "lambda_cycle" => self.lambda_cycle.to_string(),
            "lambda_identity" => self.lambda_identity.to_string(),
            "pool_capacity" => self.pool_capacity.to_string(),
            "loss_mode" => self.loss_mode.to_string(),
            "image_size" => self.image_size.to_string(),
            "n_res_blocks" => self.n_res_blocks.to_string(),
            "base_filters" => self.base_filters.to_string(),
            "disc_filters" => self.disc_filters.to_string(),
            "seed" => self.seed.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "log_every" => self.log_every.to_string(),
            "workers" => self.workers.to_string(),
            "crop" => self.crop.to_string(),
            "hflip" => self.hflip.to_string(),
            "vflip" => self.vflip.to_string(),
            "rotate" => self.rotate.to_string(),
            _ => return None,
        })
    }

    /// One `key = value` line per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("every listed key is readable"));
        }
        s
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn overlay_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.overlay_text(text)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs, 100);
        assert_eq!(c.batch, 1);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.lambda_cycle, 10.0);
        assert_eq!(c.lambda_identity, 0.0);
        assert_eq!(c.workers, 4);
        assert_eq!(c.image_size, 256);
        assert_eq!(c.pool_capacity, 50);
        assert_eq!(c.n_res_blocks, 9);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.lr = 2.5e-4;
        c.loss_mode = LossMode::Log;
        c.crop = CropMode::None;
        c.seed = 99;
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(TrainConfig::from_text("learning_rate = 0.1").is_err());
        assert!(TrainConfig::from_text("epochs: 3").is_err());
        assert!(TrainConfig::from_text("epochs = many").is_err());
    }

    #[test]
    fn batch_other_than_one_rejected() {
        let c = TrainConfig {
            batch: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
