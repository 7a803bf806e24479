//! The CycleGAN training loop.
//!
//! Each iteration updates the two generators jointly, then `D_X`, then `D_Y`.
//! Discriminators see generated images through their image pools, as
//! detached constants, so their updates never touch generator parameters.

mod checkpoint;
mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{TrainConfig, CONFIG_KEYS};

use crate::autodiff::{Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::write_loss_csv;
use crate::models::{Discriminator, Generator};
use crate::objectives::{
    adversarial_d_loss, adversarial_g_loss, cycle_loss, identity_loss, total_generator_objective,
};
use crate::optim::{adam_step, AdamState, ParamGroup};
use crate::pool::ImagePool;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Generators,
    DiscriminatorX,
    DiscriminatorY,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    /// Full generator objective.
    pub g_loss: f32,
    pub adv_xy: f32,
    pub adv_yx: f32,
    pub cycle: f32,
    pub identity: Option<f32>,
    pub d_x_loss: f32,
    pub d_y_loss: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// 1-based epoch number.
    pub epoch: u64,
    pub generator_loss: f64,
    /// Mean over the epoch of `(D_X + D_Y) / 2`.
    pub discriminator_loss: f64,
    pub cycle_loss: f64,
}

/// Where `fit` writes checkpoints and the loss log; nothing is written when
/// `out_dir` is `None`.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub out_dir: Option<PathBuf>,
    pub verbose: bool,
}

/// Seed for the `k`-th independent random stream derived from the run seed.
fn stream_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ k
}

pub struct Trainer {
    pub config: TrainConfig,
    pub g: Generator,
    pub f: Generator,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
    pub opt_generators: AdamState,
    pub opt_d_x: AdamState,
    pub opt_d_y: AdamState,
    pub pool_x: ImagePool,
    pub pool_y: ImagePool,
    /// Completed epochs.
    pub epoch: u64,
    pub iteration: usize,
    /// Skip discriminator updates (the generators still train against them).
    pub freeze_discriminators: bool,
    update_log: Vec<Network>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let s = config.seed;
        let g = Generator::build(config.generator_spec(), stream_seed(s, 1))?;
        let f = Generator::build(config.generator_spec(), stream_seed(s, 2))?;
        let d_x = Discriminator::build(config.discriminator_spec(), stream_seed(s, 3))?;
        let d_y = Discriminator::build(config.discriminator_spec(), stream_seed(s, 4))?;
        Ok(Trainer {
            pool_x: ImagePool::new(config.pool_capacity, stream_seed(s, 5)),
            pool_y: ImagePool::new(config.pool_capacity, stream_seed(s, 6)),
            config,
            g,
            f,
            d_x,
            d_y,
            opt_generators: AdamState::new(),
            opt_d_x: AdamState::new(),
            opt_d_y: AdamState::new(),
            epoch: 0,
            iteration: 0,
            freeze_discriminators: false,
            update_log: Vec::new(),
        })
    }

    /// Restores networks and optimizer state; pools start empty.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ckpt.config.clone())?;
        t.g.params = ckpt.g;
        t.f.params = ckpt.f;
        t.d_x.params = ckpt.d_x;
        t.d_y.params = ckpt.d_y;
        t.opt_generators = ckpt.opt_generators;
        t.opt_d_x = ckpt.opt_d_x;
        t.opt_d_y = ckpt.opt_d_y;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            g: self.g.params.clone(),
            f: self.f.params.clone(),
            d_x: self.d_x.params.clone(),
            d_y: self.d_y.params.clone(),
            opt_generators: self.opt_generators.clone(),
            opt_d_x: self.opt_d_x.clone(),
            opt_d_y: self.opt_d_y.clone(),
        }
    }

    /// Networks updated by the most recent `train_step`, in order.
    pub fn update_log(&self) -> &[Network] {
        &self.update_log
    }

    fn finite(&self, loss: &'static str, value: f32) -> Result<f32> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite {
                iteration: self.iteration,
                loss,
                value,
            })
        }
    }

    /// One joint generator update followed by one update of each discriminator.
    /// `x` is an RGB image and `y` a thermal image, both `1x3xSxS` in `[-1, 1]`.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor) -> Result<StepLosses> {
        if x.shape().n() != 1 || y.shape().n() != 1 {
            return Err(Error::InvalidArgument(format!(
                "train_step expects batch 1, got {} and {}",
                x.shape(),
                y.shape()
            )));
        }
        self.update_log.clear();
        let hyper = self.config.adam();
        let weights = self.config.weights();
        let mode = self.config.loss_mode;

        // Generators.
        let (fake_x, fake_y, g_part) = {
            let tape = Tape::new();
            let gp = self.g.params.bind(&tape, true);
            let fp = self.f.params.bind(&tape, true);
            let dxp = self.d_x.params.bind(&tape, false);
            let dyp = self.d_y.params.bind(&tape, false);
            let xv = Var::constant(x.clone());
            let yv = Var::constant(y.clone());

            let fake_y = self.g.forward(&tape, &gp, &xv)?;
            let fake_x = self.f.forward(&tape, &fp, &yv)?;
            let rec_x = self.f.forward(&tape, &fp, &fake_y)?;
            let rec_y = self.g.forward(&tape, &gp, &fake_x)?;

            let adv_xy = adversarial_g_loss(&tape, &self.d_y.forward(&tape, &dyp, &fake_y)?, mode)?;
            let adv_yx = adversarial_g_loss(&tape, &self.d_x.forward(&tape, &dxp, &fake_x)?, mode)?;
            let cyc = cycle_loss(&tape, &xv, &rec_x, &yv, &rec_y)?;
            let idt = if weights.lambda_identity > 0.0 {
                let g_of_y = self.g.forward(&tape, &gp, &yv)?;
                let f_of_x = self.f.forward(&tape, &fp, &xv)?;
                Some(identity_loss(&tape, &yv, &g_of_y, &xv, &f_of_x)?)
            } else {
                None
            };
            let total = total_generator_objective(&tape, &adv_xy, &adv_yx, &cyc, idt.as_ref(), &weights)?;

            let g_loss = self.finite("generator loss", total.value().item())?;
            let grads = tape.backward(&total)?;
            let g_grads = gp.grads(&grads);
            let f_grads = fp.grads(&grads);
            adam_step(
                &mut [
                    ParamGroup {
                        name: "G",
                        params: &mut self.g.params,
                        grads: &g_grads,
                    },
                    ParamGroup {
                        name: "F",
                        params: &mut self.f.params,
                        grads: &f_grads,
                    },
                ],
                &mut self.opt_generators,
                &hyper,
            )?;
            self.update_log.push(Network::Generators);
            let part = (
                g_loss,
                adv_xy.value().item(),
                adv_yx.value().item(),
                cyc.value().item(),
                idt.map(|v| v.value().item()),
            );
            (fake_x.into_value(), fake_y.into_value(), part)
        };

        let pooled_x = self.pool_x.query(fake_x)?;
        let pooled_y = self.pool_y.query(fake_y)?;
        let d_x_loss = self.discriminator_step(Network::DiscriminatorX, x, pooled_x)?;
        let d_y_loss = self.discriminator_step(Network::DiscriminatorY, y, pooled_y)?;
        self.iteration += 1;

        let (g_loss, adv_xy, adv_yx, cycle, identity) = g_part;
        Ok(StepLosses {
            g_loss,
            adv_xy,
            adv_yx,
            cycle,
            identity,
            d_x_loss,
            d_y_loss,
        })
    }

    fn discriminator_step(&mut self, which: Network, real: &Tensor, fake: Tensor) -> Result<f32> {
        let (d, state, label, group) = match which {
            Network::DiscriminatorX => (&mut self.d_x, &mut self.opt_d_x, "D_X loss", "D_X"),
            Network::DiscriminatorY => (&mut self.d_y, &mut self.opt_d_y, "D_Y loss", "D_Y"),
            Network::Generators => unreachable!("generators are not a discriminator"),
        };
        let tape = Tape::new();
        let dp = d.params.bind(&tape, !self.freeze_discriminators);
        let d_real = d.forward(&tape, &dp, &Var::constant(real.clone()))?;
        let d_fake = d.forward(&tape, &dp, &Var::constant(fake))?;
        let loss = adversarial_d_loss(&tape, &d_real, &d_fake, self.config.loss_mode)?;
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                loss: label,
                value,
            });
        }
        if self.freeze_discriminators {
            return Ok(value);
        }
        let grads = tape.backward(&loss)?;
        let dgrads = dp.grads(&grads);
        adam_step(
            &mut [ParamGroup {
                name: group,
                params: &mut d.params,
                grads: &dgrads,
            }],
            state,
            &self.config.adam(),
        )?;
        self.update_log.push(which);
        Ok(value)
    }

    pub fn checkpoint_path(dir: &Path, epoch: u64) -> PathBuf {
        dir.join(format!("checkpoint_epoch_{epoch:04}.cygn"))
    }

    /// Trains from the current epoch up to `config.epochs`, returning one
    /// record per completed epoch.
    pub fn fit(&mut self, dataset: &Dataset, opts: &FitOptions) -> Result<Vec<LossRecord>> {
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let started = Instant::now();
            let (mut g_sum, mut d_sum, mut c_sum, mut n) = (0.0f64, 0.0f64, 0.0f64, 0usize);
            for pair in dataset.epoch(self.epoch) {
                let (x, y) = pair?;
                let l = self.train_step(&x.image, &y.image)?;
                g_sum += l.g_loss as f64;
                d_sum += 0.5 * (l.d_x_loss as f64 + l.d_y_loss as f64);
                c_sum += l.cycle as f64;
                n += 1;
                if opts.verbose && self.iteration % self.config.log_every == 0 {
                    eprintln!(
                        "epoch {} iter {}: g {:.4} (adv {:.4}/{:.4}, cyc {:.4}) d_x {:.4} d_y {:.4}",
                        self.epoch + 1,
                        self.iteration,
                        l.g_loss,
                        l.adv_xy,
                        l.adv_yx,
                        l.cycle,
                        l.d_x_loss,
                        l.d_y_loss
                    );
                }
            }
            if n == 0 {
                return Err(Error::Dataset("epoch produced no samples".into()));
            }
            self.epoch += 1;
            let record = LossRecord {
                epoch: self.epoch,
                generator_loss: g_sum / n as f64,
                discriminator_loss: d_sum / n as f64,
                cycle_loss: c_sum / n as f64,
            };
            records.push(record);
            if opts.verbose {
                eprintln!(
                    "epoch {} done in {:.1}s: generator {:.4}, discriminator {:.4}",
                    record.epoch,
                    started.elapsed().as_secs_f64(),
                    record.generator_loss,
                    record.discriminator_loss
                );
            }
            if let Some(dir) = &opts.out_dir {
                write_loss_csv(&records, &dir.join("losses.csv"))?;
                if self.epoch % self.config.checkpoint_every == 0 || self.epoch == self.config.epochs {
                    self.to_checkpoint().save(&Self::checkpoint_path(dir, self.epoch))?;
                }
            }
        }
        Ok(records)
    }
}

/// Builds a trainer from `cfg` and trains it on `dataset`.
pub fn fit(cfg: TrainConfig, dataset: &Dataset, opts: &FitOptions) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(cfg)?;
    let records = trainer.fit(dataset, opts)?;
    Ok((trainer.to_checkpoint(), records))
}
