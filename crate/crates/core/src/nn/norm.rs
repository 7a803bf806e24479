use crate::autodiff::{BackwardFn, OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const INSTANCE_NORM_EPS: f32 = 1e-5;

/// Per-sample, per-channel standardization over the spatial plane followed by
/// a learned affine map. Variance is the biased (population) estimate.
pub fn instance_norm(tape: &Tape, x: &Var, gamma: &Var, beta: &Var, eps: f32) -> Result<Var> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("instance_norm eps must be > 0, got {eps}")));
    }
    let shape = x.shape();
    let c = shape.c();
    gamma.value().expect_shape(Shape::channels(c)?, "instance_norm")?;
    beta.value().expect_shape(Shape::channels(c)?, "instance_norm")?;
    let plane = shape.plane();

    let mut xhat = vec![0.0f32; shape.numel()];
    let mut inv_std = Vec::with_capacity(shape.n() * c);
    for (src, dst) in x.value().data().chunks_exact(plane).zip(xhat.chunks_exact_mut(plane)) {
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = ((s as f64 - mean) * istd) as f32;
        }
        inv_std.push(istd as f32);
    }
    let (gv, bv) = (gamma.value().clone(), beta.value().clone());
    let mut out = xhat.clone();
    for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let (g, b) = (gv.data()[i % c], bv.data()[i % c]);
        for v in chunk {
            *v = g * *v + b;
        }
    }
    let out = Tensor::new(shape, out)?;
    let xhat = Tensor::new(shape, xhat)?;

    let backward: BackwardFn = Box::new(move |g, need| {
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        let mut dx = need[0].then(|| vec![0.0f32; shape.numel()]);
        let slices = g.data().chunks_exact(plane).zip(xhat.data().chunks_exact(plane));
        for (i, (gs, xs)) in slices.enumerate() {
            let ch = i % c;
            let sum_g: f64 = gs.iter().map(|&v| v as f64).sum();
            let sum_gx: f64 = gs.iter().zip(xs).map(|(&a, &b)| a as f64 * b as f64).sum();
            dgamma[ch] += sum_gx as f32;
            dbeta[ch] += sum_g as f32;
            if let Some(dx) = dx.as_mut() {
                // dx = gamma * istd * (g - mean(g) - xhat * mean(g * xhat))
                let scale = gv.data()[ch] * inv_std[i];
                let mean_g = (sum_g / plane as f64) as f32;
                let mean_gx = (sum_gx / plane as f64) as f32;
                let dst = &mut dx[i * plane..(i + 1) * plane];
                for ((d, &gj), &xj) in dst.iter_mut().zip(gs).zip(xs) {
                    *d = scale * (gj - mean_g - xj * mean_gx);
                }
            }
        }
        let cshape = Shape::channels(c)?;
        Ok(vec![
            dx.map(|d| Tensor::new(shape, d)).transpose()?,
            need[1].then(|| Tensor::new(cshape, dgamma)).transpose()?,
            need[2].then(|| Tensor::new(cshape, dbeta)).transpose()?,
        ])
    });
    tape.record(OpKind::InstanceNorm, &[x, gamma, beta], out, backward)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize, g: f32, b: f32) -> (Var, Var) {
        let s = Shape::channels(c).unwrap();
        (Var::constant(Tensor::full(s, g)), Var::constant(Tensor::full(s, b)))
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::full(Shape::new(1, 2, 3, 3).unwrap(), 5.0));
        let (g, b) = affine(2, 1.0, 0.0);
        let y = instance_norm(&tape, &x, &g, &b, INSTANCE_NORM_EPS).unwrap();
        assert!(y.value().max_abs() <= 1e-3);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::from_fn(Shape::new(1, 2, 3, 3).unwrap(), |i| i as f32));
        let (g, b) = affine(2, 0.0, 7.0);
        let y = instance_norm(&tape, &x, &g, &b, INSTANCE_NORM_EPS).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn rejects_gamma_shape() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::zeros(Shape::new(1, 2, 3, 3).unwrap()));
        let (g, b) = affine(3, 1.0, 0.0);
        assert!(instance_norm(&tape, &x, &g, &b, INSTANCE_NORM_EPS).is_err());
    }
}
