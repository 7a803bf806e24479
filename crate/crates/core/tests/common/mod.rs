//! Independent reference implementations used only by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalcycle::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(dims: [usize; 4], rng: &mut impl Rng) -> Tensor {
    let s = Shape::new(dims[0], dims[1], dims[2], dims[3]).unwrap();
    Tensor::uniform(s, -1.0, 1.0, rng)
}

/// Direct seven-deep loop cross-correlation with zero padding, accumulated in f64.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, cin, h, wd] = x.shape().dims();
    let [cout, wcin, k, _] = w.shape().dims();
    assert_eq!(cin, wcin);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(ni, ci, iy as usize, ix as usize) as f64
                                    * w.at(co, ci, ky, kx) as f64;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec([n, cout, oh, ow], out).unwrap()
}

/// Scatter form of the transposed convolution, weights laid out `(Cin, Cout, k, k)`.
pub fn naive_conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Tensor {
    let [n, cin, h, wd] = x.shape().dims();
    let [wcin, cout, k, _] = w.shape().dims();
    assert_eq!(cin, wcin);
    let oh = (h - 1) * stride + k + output_padding - 2 * pad;
    let ow = (wd - 1) * stride + k + output_padding - 2 * pad;
    let mut acc = vec![0.0f64; n * cout * oh * ow];
    for ni in 0..n {
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.at(ni, ci, iy, ix) as f64;
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                acc[((ni * cout + co) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.at(ci, co, ky, kx) as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let out = acc
        .iter()
        .enumerate()
        .map(|(i, &v)| (v + b.data()[(i / (oh * ow)) % cout] as f64) as f32)
        .collect();
    Tensor::from_vec([n, cout, oh, ow], out).unwrap()
}

/// Straight-line Adam over a flat parameter vector, with the gradient supplied
/// by `grad` at every step. Returns the parameters after each step.
pub fn adam_reference(
    theta0: &[f32],
    steps: usize,
    lr: f32,
    grad: impl Fn(&[f32]) -> Vec<f32>,
) -> Vec<Vec<f32>> {
    let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
    let (c1, c2) = (0.1f32, 0.001f32);
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0f32; theta.len()];
    let mut v = vec![0.0f32; theta.len()];
    let mut trace = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(&theta);
        let bc1 = 1.0 - 0.9f64.powi(t as i32);
        let bc2 = 1.0 - 0.999f64.powi(t as i32);
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + c1 * g[i];
            v[i] = b2 * v[i] + c2 * g[i] * g[i];
            let m_hat = (m[i] as f64 / bc1) as f32;
            let v_hat = (v[i] as f64 / bc2) as f32;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        trace.push(theta.clone());
    }
    trace
}

/// Layer-by-layer parameter count of the default generator, from the layer
/// list written out by hand.
pub fn generator_param_count(f: usize, blocks: usize) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let norm = |c: usize| 2 * c;
    let mut n = conv(3, f, 7) + norm(f);
    n += conv(f, 2 * f, 3) + norm(2 * f);
    n += conv(2 * f, 4 * f, 3) + norm(4 * f);
    n += blocks * 2 * (conv(4 * f, 4 * f, 3) + norm(4 * f));
    n += conv(4 * f, 2 * f, 3) + norm(2 * f);
    n += conv(2 * f, f, 3) + norm(f);
    n + conv(f, 3, 7)
}

/// Upper-tail chi-square statistic of observed counts against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}
