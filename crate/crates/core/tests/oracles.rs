//! Derived examples checked against independent reference computations.

mod common;

use common::{generator_param_count, naive_conv2d, naive_conv_transpose2d, random, rng};
use rand::Rng;
use thermalcycle::autodiff::{Tape, Var};
use thermalcycle::data::synthetic::write_dataset;
use thermalcycle::data::{augment, bilinear_resize, Augment, Dataset, DatasetConfig};
use thermalcycle::eval::{paired_mse, psnr};
use thermalcycle::models::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ModelParams, ParamGrads};
use thermalcycle::nn::{conv2d, conv_transpose2d, instance_norm, ConvSpec, ConvTransposeSpec, INSTANCE_NORM_EPS};
use thermalcycle::optim::{adam_step, AdamHyper, AdamState, ParamGroup};
use thermalcycle::{Shape, Tensor};

fn run_conv(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Tensor {
    let tape = Tape::new();
    let c = |t: &Tensor| Var::constant(t.clone());
    conv2d(&tape, &c(x), &c(w), &c(b), spec).unwrap().into_value()
}

#[test]
fn strided_padded_conv_matches_direct_loops() {
    let mut r = rng(10);
    let x = random([1, 2, 5, 5], &mut r);
    let w = random([3, 2, 3, 3], &mut r);
    let b = random([1, 3, 1, 1], &mut r);
    let got = run_conv(&x, &w, &b, &ConvSpec::new(2, 3, 3, 2, 1));
    let want = naive_conv2d(&x, &w, &b, 2, 1);
    assert_eq!(got.shape(), want.shape());
    assert!(got.max_abs_diff(&want).unwrap() <= 1e-5);
}

#[test]
fn conv_transpose_matches_scatter_loops() {
    let mut r = rng(11);
    for _ in 0..40 {
        let k = r.random_range(1..=4);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..k);
        let output_padding = r.random_range(0..stride);
        let h = r.random_range(2..=5);
        if (h - 1) * stride + k + output_padding <= 2 * pad {
            continue;
        }
        let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
        let x = random([1, cin, h, h], &mut r);
        let w = random([cin, cout, k, k], &mut r);
        let b = random([1, cout, 1, 1], &mut r);
        let spec = ConvTransposeSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride,
            padding: pad,
            output_padding,
        };
        let tape = Tape::new();
        let c = |t: &Tensor| Var::constant(t.clone());
        let got = conv_transpose2d(&tape, &c(&x), &c(&w), &c(&b), &spec).unwrap();
        let want = naive_conv_transpose2d(&x, &w, &b, stride, pad, output_padding);
        assert_eq!(got.shape(), want.shape());
        assert!(got.value().max_abs_diff(&want).unwrap() <= 1e-5);
    }
}

#[test]
fn instance_norm_statistics_match_direct_computation() {
    let x = random([1, 2, 4, 4], &mut rng(12));
    let tape = Tape::new();
    let ones = Var::constant(Tensor::ones(Shape::channels(2).unwrap()));
    let zeros = Var::constant(Tensor::zeros(Shape::channels(2).unwrap()));
    let y = instance_norm(&tape, &Var::constant(x), &ones, &zeros, INSTANCE_NORM_EPS).unwrap();
    for plane in y.value().data().chunks(16) {
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
        let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-5, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-3, "variance {var}");
    }
}

#[test]
fn generator_parameter_count_matches_layer_walk() {
    let default = Generator::build(GeneratorSpec::for_image_size(256), 0).unwrap();
    assert_eq!(default.params.num_scalars(), generator_param_count(64, 9));
    let small = GeneratorSpec {
        base_filters: 8,
        ..GeneratorSpec::for_image_size(64)
    };
    assert_eq!(Generator::build(small, 0).unwrap().params.num_scalars(), generator_param_count(8, 6));
}

#[test]
fn generator_preserves_shape_and_range() {
    let spec = GeneratorSpec {
        base_filters: 4,
        ..GeneratorSpec::for_image_size(256)
    };
    let g = Generator::build(spec, 1).unwrap();
    let out = g.run(&Tensor::zeros(Shape::new(1, 3, 256, 256).unwrap())).unwrap();
    assert_eq!(out.shape().dims(), [1, 3, 256, 256]);

    let spec = GeneratorSpec {
        base_filters: 4,
        ..GeneratorSpec::for_image_size(64)
    };
    let g = Generator::build(spec, 2).unwrap();
    let out = g.run(&random([1, 3, 64, 64], &mut rng(13))).unwrap();
    assert_eq!(out.shape().dims(), [1, 3, 64, 64]);
    assert!(out.max_abs() < 1.0);
    assert!(Generator::build(spec, 2).unwrap().params.bit_eq(&g.params));
}

#[test]
fn discriminator_shape_law() {
    let spec = DiscriminatorSpec::with_base(2);
    let d = Discriminator::build(spec.clone(), 3).unwrap();
    for (input, side) in [(256, 30), (128, 14), (70, 6)] {
        let out = d.run(&Tensor::zeros(Shape::new(1, 3, input, input).unwrap())).unwrap();
        assert_eq!(out.shape().dims(), [1, 1, side, side], "input {input}");
        assert_eq!(spec.output_size(input), Some(side));
    }
    assert!(Discriminator::build(spec, 3).unwrap().params.bit_eq(&d.params));
}

#[test]
fn zero_weights_give_bias_only_logits() {
    let mut d = Discriminator::build(DiscriminatorSpec::with_base(2), 4).unwrap();
    for (_, t) in d.params.iter_mut() {
        t.data_mut().fill(0.0);
    }
    d.params.get_mut("out.bias").unwrap().data_mut().fill(0.75);
    let out = d.run(&Tensor::zeros(Shape::new(1, 3, 70, 70).unwrap())).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.75));
}

#[test]
fn paired_mse_matches_elementwise_formula() {
    let mut r = rng(14);
    let s = Shape::new(1, 3, 9, 7).unwrap();
    let a = Tensor::uniform(s, 0.0, 1.0, &mut r);
    let b = Tensor::uniform(s, 0.0, 1.0, &mut r);
    let mut acc = 0.0f64;
    for i in 0..s.numel() {
        let d = a.data()[i] as f64 - b.data()[i] as f64;
        acc += d * d;
    }
    let want = acc / s.numel() as f64;
    assert!((paired_mse(&a, &b).unwrap() - want).abs() <= 1e-7);
    assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / want).log10()).abs() <= 1e-7);
}

#[test]
fn checkerboard_upsampling_matches_hand_grid() {
    let board = Tensor::from_fn(Shape::new(1, 1, 4, 4).unwrap(), |i| ((i / 4 + i % 4) % 2) as f32);
    let out = bilinear_resize(&board, 8, 8).unwrap();
    // (left tap, right tap, weight of right tap) for each output coordinate.
    let taps = [
        (0, 1, 0.0),
        (0, 1, 0.25),
        (0, 1, 0.75),
        (1, 2, 0.25),
        (1, 2, 0.75),
        (2, 3, 0.25),
        (2, 3, 0.75),
        (3, 3, 0.0),
    ];
    let cell = |y: usize, x: usize| ((y + x) % 2) as f32;
    for (oy, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in taps.iter().enumerate() {
            let top = cell(y0, x0) * (1.0 - fx) + cell(y0, x1) * fx;
            let bottom = cell(y1, x0) * (1.0 - fx) + cell(y1, x1) * fx;
            let want = top * (1.0 - fy) + bottom * fy;
            assert!((out.at(0, 0, oy, ox) - want).abs() <= 1e-6, "({oy}, {ox})");
        }
    }
}

#[test]
fn rotation_draws_are_uniform() {
    let img = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let cfg = Augment {
        hflip: false,
        vflip: false,
        rotate: true,
    };
    let mut counts = [0usize; 4];
    let mut r = rng(15);
    for _ in 0..10_000 {
        let out = augment(&img, &cfg, &mut r).unwrap();
        let turn = match out.data()[0] as usize {
            0 => 0,
            1 => 1,
            3 => 2,
            2 => 3,
            _ => unreachable!(),
        };
        counts[turn] += 1;
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 0.25).abs() <= 0.03, "{counts:?}");
    }
}

#[test]
fn different_seeds_give_different_pairings() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 4, 0, 8, 1).unwrap();
    let mut differing = 0;
    for seed in 0..500u64 {
        let a = Dataset::open(DatasetConfig::training(dir.path(), 8, 2 * seed)).unwrap();
        let b = Dataset::open(DatasetConfig::training(dir.path(), 8, 2 * seed + 1)).unwrap();
        if a.epoch_plan(0) != b.epoch_plan(0) {
            differing += 1;
        }
    }
    assert!(differing as f64 / 500.0 > 0.99, "{differing}/500");
}

fn one(name: &str, v: f32) -> ModelParams {
    let mut p = ModelParams::new();
    p.insert(name, Tensor::scalar(v)).unwrap();
    p
}

#[test]
fn adam_first_step_closed_form() {
    let mut p = one("theta", 1.0);
    let g: ParamGrads = [("theta".to_string(), Tensor::scalar(0.5))].into();
    let mut state = AdamState::new();
    let group = ParamGroup {
        name: "q",
        params: &mut p,
        grads: &g,
    };
    adam_step(&mut [group], &mut state, &AdamHyper::default()).unwrap();
    let want = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
    assert!((p.get("theta").unwrap().item() as f64 - want).abs() <= 1e-7);
}

#[test]
fn adam_two_parameters_equal_two_single_updates() {
    let h = AdamHyper::default();
    let mut both = ModelParams::new();
    both.insert("a", Tensor::scalar(0.3)).unwrap();
    both.insert("b", Tensor::scalar(-2.0)).unwrap();
    let g: ParamGrads = [("a".to_string(), Tensor::scalar(0.7)), ("b".to_string(), Tensor::scalar(-0.01))].into();
    let mut s = AdamState::new();
    for _ in 0..3 {
        let group = ParamGroup {
            name: "q",
            params: &mut both,
            grads: &g,
        };
        adam_step(&mut [group], &mut s, &h).unwrap();
    }
    for (name, v) in [("a", 0.3f32), ("b", -2.0)] {
        let mut p = one(name, v);
        let gi: ParamGrads = [(name.to_string(), g[name].clone())].into();
        let mut si = AdamState::new();
        for _ in 0..3 {
            let group = ParamGroup {
                name: "q",
                params: &mut p,
                grads: &gi,
            };
            adam_step(&mut [group], &mut si, &h).unwrap();
        }
        assert!(p.get(name).unwrap().bit_eq(both.get(name).unwrap()));
    }
}
