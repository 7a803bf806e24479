//! Training loop, checkpoint and inference behaviour on toy models.

mod common;

use common::{random, rng};
use thermalcycle::data::synthetic::write_dataset;
use thermalcycle::data::{to_model_range, Dataset, DatasetConfig};
use thermalcycle::eval::{evaluate, translate, Direction};
use thermalcycle::trainer::{Checkpoint, FitOptions, Network, TrainConfig, Trainer, FORMAT_VERSION, MAGIC};
use thermalcycle::{Error, Tensor};

fn toy_config(size: usize) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        image_size: size,
        n_res_blocks: 1,
        base_filters: 2,
        disc_filters: 2,
        checkpoint_every: 1,
        workers: 1,
        ..TrainConfig::default()
    }
}

fn pair(size: usize, seed: u64) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    (random([1, 3, size, size], &mut r), random([1, 3, size, size], &mut r))
}

#[test]
fn update_order_is_generators_then_each_discriminator() {
    let mut t = Trainer::new(toy_config(32)).unwrap();
    let (x, y) = pair(32, 1);
    t.train_step(&x, &y).unwrap();
    assert_eq!(
        t.update_log(),
        &[Network::Generators, Network::DiscriminatorX, Network::DiscriminatorY]
    );
}

#[test]
fn discriminator_updates_leave_generators_untouched() {
    let (x, y) = pair(32, 2);
    let mut live = Trainer::new(toy_config(32)).unwrap();
    let mut frozen = Trainer::new(toy_config(32)).unwrap();
    frozen.freeze_discriminators = true;
    let d_before = frozen.d_x.params.clone();
    for _ in 0..2 {
        live.train_step(&x, &y).unwrap();
        frozen.train_step(&x, &y).unwrap();
    }
    assert!(frozen.d_x.params.bit_eq(&d_before));
    assert_eq!(frozen.update_log(), &[Network::Generators]);
    assert!(!live.d_x.params.bit_eq(&d_before));

    let mut once = Trainer::new(toy_config(32)).unwrap();
    let mut reference = Trainer::new(toy_config(32)).unwrap();
    reference.freeze_discriminators = true;
    once.train_step(&x, &y).unwrap();
    reference.train_step(&x, &y).unwrap();
    assert!(once.g.params.bit_eq(&reference.g.params));
    assert!(once.f.params.bit_eq(&reference.f.params));
}

fn zero_all(t: &mut Trainer) {
    for p in [&mut t.g.params, &mut t.f.params, &mut t.d_x.params, &mut t.d_y.params] {
        for (_, v) in p.iter_mut() {
            v.data_mut().fill(0.0);
        }
    }
}

fn mean_abs(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v.abs() as f64).sum::<f64>() / t.numel() as f64
}

#[test]
fn zero_initialized_step_matches_scripted_losses() {
    let mut t = Trainer::new(toy_config(32)).unwrap();
    zero_all(&mut t);
    let (x, y) = pair(32, 3);
    let l = t.train_step(&x, &y).unwrap();
    // Every network maps to exactly 0, so the discriminators emit 0 logits,
    // the generators emit 0 images and reconstructions are 0.
    let adv = 1.0;
    let cycle = mean_abs(&x) + mean_abs(&y);
    let total = 2.0 * adv + 10.0 * cycle;
    assert_eq!(l.adv_xy, 1.0);
    assert_eq!(l.adv_yx, 1.0);
    assert!((l.cycle as f64 - cycle).abs() <= 1e-6);
    assert!((l.g_loss as f64 - total).abs() <= 1e-5);
    assert_eq!(l.identity, None);
    assert_eq!(l.d_x_loss, 0.5);
    assert_eq!(l.d_y_loss, 0.5);
}

#[test]
fn without_cycle_weight_only_adversarial_terms_remain() {
    let mut cfg = toy_config(32);
    cfg.lambda_cycle = 0.0;
    let mut t = Trainer::new(cfg).unwrap();
    zero_all(&mut t);
    let (x, y) = pair(32, 4);
    let l = t.train_step(&x, &y).unwrap();
    assert_eq!(l.g_loss, l.adv_xy + l.adv_yx);
}

#[test]
fn frozen_constant_discriminators_isolate_the_cycle_pathway() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 6, 0, 32, 5).unwrap();
    let mut cfg = toy_config(32);
    cfg.epochs = 6;
    cfg.base_filters = 4;
    let data = Dataset::open(cfg.dataset(dir.path())).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    for d in [&mut t.d_x.params, &mut t.d_y.params] {
        for (_, v) in d.iter_mut() {
            v.data_mut().fill(0.0);
        }
        d.get_mut("out.bias").unwrap().data_mut().fill(1.0);
    }
    t.freeze_discriminators = true;
    let records = t.fit(&data, &FitOptions::default()).unwrap();
    assert!(records.last().unwrap().cycle_loss < records[0].cycle_loss, "{records:?}");
    assert!(records.iter().all(|r| r.discriminator_loss == 0.5));
}

#[test]
fn one_epoch_writes_a_checkpoint_and_resume_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = dir.path().join("run");
    write_dataset(&data_dir, 2, 2, 32, 6).unwrap();
    let cfg = toy_config(32);
    let data = Dataset::open(cfg.dataset(&data_dir)).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let opts = FitOptions {
        out_dir: Some(out.clone()),
        verbose: false,
    };
    let records = t.fit(&data, &opts).unwrap();
    assert_eq!(records.len(), 1);
    let ckpt_path = Trainer::checkpoint_path(&out, 1);
    assert!(ckpt_path.exists());
    assert!(out.join("losses.csv").exists());
    let saved = Checkpoint::load(&ckpt_path).unwrap();
    assert!(saved.bit_eq(&t.to_checkpoint()));

    let mut resumed = Trainer::from_checkpoint(saved.clone()).unwrap();
    assert!(resumed.fit(&data, &FitOptions::default()).unwrap().is_empty());
    assert!(resumed.to_checkpoint().bit_eq(&saved));

    let test = Dataset::open(DatasetConfig::evaluation(&data_dir, 32)).unwrap();
    let report = evaluate(&saved, &test).unwrap();
    assert_eq!(report.images.len(), 2);
    assert!(report.mean_mse.is_finite());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let t = Trainer::new(toy_config(32)).unwrap();
    let bytes = t.to_checkpoint().to_bytes();
    assert_eq!(&bytes[..4], MAGIC);

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "cut {cut}: {err}");
    }

    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bumped).unwrap_err().to_string();
    assert!(err.contains("unsupported"), "{err}");

    let mut bad_magic = bytes;
    bad_magic[0] ^= 0xFF;
    let err = Checkpoint::from_bytes(&bad_magic).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
}

#[test]
fn translation_is_deterministic_and_in_range() {
    let ckpt = Trainer::new(toy_config(32)).unwrap().to_checkpoint();
    let img = random([1, 3, 32, 32], &mut rng(7)).map(|v| 0.5 * (v + 1.0));
    for dir in [Direction::RgbToThermal, Direction::ThermalToRgb] {
        let a = translate(&ckpt, &img, dir).unwrap();
        let b = translate(&ckpt, &img, dir).unwrap();
        assert_eq!(a.shape(), img.shape());
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(to_model_range(&img).is_ok());
}
