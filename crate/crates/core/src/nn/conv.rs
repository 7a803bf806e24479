use super::kernels::{col2im, gemm, im2col, Mat, Window};
use super::pad::reflection_pad;
use crate::autodiff::{BackwardFn, OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            pad_mode: PadMode::Zero,
        }
    }

    pub fn reflect(self) -> Self {
        ConvSpec {
            pad_mode: PadMode::Reflect,
            ..self
        }
    }

    pub fn weight_shape(&self) -> Result<Shape> {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    /// Output side length for an input side of `size`, if the window fits.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        (self.kernel >= 1 && self.stride >= 1 && padded >= self.kernel)
            .then(|| (padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTransposeSpec {
    /// Weight layout is `(in_channels, out_channels, k, k)`, the same buffer a
    /// forward convolution mapping `out_channels -> in_channels` would use.
    pub fn weight_shape(&self) -> Result<Shape> {
        Shape::new(self.in_channels, self.out_channels, self.kernel, self.kernel)
    }

    pub fn output_size(&self, size: usize) -> Option<usize> {
        let full = (size - 1) * self.stride + self.kernel + self.output_padding;
        (size >= 1 && full > 2 * self.padding).then(|| full - 2 * self.padding)
    }
}

fn check_params(op: &'static str, x: &Var, w: &Var, b: &Var, weight: Shape, in_ch: usize, out_ch: usize) -> Result<()> {
    if x.shape().c() != in_ch {
        return Err(Error::InvalidShape {
            op,
            reason: format!("input {} has {} channels, spec expects {in_ch}", x.shape(), x.shape().c()),
        });
    }
    w.value().expect_shape(weight, op)?;
    b.value().expect_shape(Shape::channels(out_ch)?, op)?;
    Ok(())
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &bv) in out.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += bv;
        }
    }
}

fn bias_grad(g: &Tensor) -> Tensor {
    let s = g.shape();
    let mut db = vec![0.0f32; s.c()];
    for (i, chunk) in g.data().chunks_exact(s.plane()).enumerate() {
        db[i % s.c()] += chunk.iter().sum::<f32>();
    }
    Tensor::new(Shape::channels(s.c()).expect("non-zero channels"), db).expect("bias length")
}

/// 2-D cross-correlation plus per-channel bias.
///
/// `x` is `N x Cin x H x W`, `w` is `Cout x Cin x k x k` and `b` is `1 x Cout x 1 x 1`.
pub fn conv2d(tape: &Tape, x: &Var, w: &Var, b: &Var, spec: &ConvSpec) -> Result<Var> {
    if spec.pad_mode == PadMode::Reflect && spec.padding > 0 {
        let padded = reflection_pad(tape, x, spec.padding)?;
        let inner = ConvSpec {
            padding: 0,
            pad_mode: PadMode::Zero,
            ..*spec
        };
        return conv2d(tape, &padded, w, b, &inner);
    }
    check_params("conv2d", x, w, b, spec.weight_shape()?, spec.in_channels, spec.out_channels)?;
    let [n, cin, h, wd] = x.shape().dims();
    let (Some(oh), Some(ow)) = (spec.output_size(h), spec.output_size(wd)) else {
        return Err(Error::InvalidShape {
            op: "conv2d",
            reason: format!(
                "input {} with padding {} is smaller than kernel {}",
                x.shape(),
                spec.padding,
                spec.kernel
            ),
        });
    };
    let win = Window {
        channels: cin,
        height: h,
        width: wd,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: oh,
        out_w: ow,
    };
    let cout = spec.out_channels;
    let out_shape = Shape::new(n, cout, oh, ow)?;
    let in_plane = cin * h * wd;
    let out_plane = cout * oh * ow;

    let mut out = vec![0.0f32; out_shape.numel()];
    let mut cols = vec![0.0f32; win.rows() * win.cols()];
    let wmat = Mat::new(w.value().data(), cout, win.rows());
    for i in 0..n {
        im2col(&x.value().data()[i * in_plane..(i + 1) * in_plane], &win, &mut cols);
        gemm(wmat, Mat::new(&cols, win.rows(), win.cols()), 0.0, &mut out[i * out_plane..(i + 1) * out_plane]);
    }
    add_bias(&mut out, b.value().data(), oh * ow);
    let out = Tensor::new(out_shape, out)?;

    let (xv, wv) = (x.value().clone(), w.value().clone());
    let backward: BackwardFn = Box::new(move |g, need| {
        let mut cols = vec![0.0f32; win.rows() * win.cols()];
        let wmat = Mat::new(wv.data(), cout, win.rows());
        let mut dx = need[0].then(|| vec![0.0f32; xv.numel()]);
        let mut dw = need[1].then(|| vec![0.0f32; wv.numel()]);
        for i in 0..n {
            let gi = Mat::new(&g.data()[i * out_plane..(i + 1) * out_plane], cout, win.cols());
            if let Some(dw) = dw.as_mut() {
                im2col(&xv.data()[i * in_plane..(i + 1) * in_plane], &win, &mut cols);
                gemm(gi, Mat::new(&cols, win.rows(), win.cols()).t(), 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(wmat.t(), gi, 0.0, &mut cols);
                col2im(&cols, &win, &mut dx[i * in_plane..(i + 1) * in_plane]);
            }
        }
        Ok(vec![
            dx.map(|d| Tensor::new(xv.shape(), d)).transpose()?,
            dw.map(|d| Tensor::new(wv.shape(), d)).transpose()?,
            need[2].then(|| bias_grad(g)),
        ])
    });
    tape.record(OpKind::Conv2d, &[x, w, b], out, backward)
}

/// Fractionally-strided convolution, the adjoint of [`conv2d`] with the same
/// kernel, stride and padding, plus bias.
pub fn conv_transpose2d(tape: &Tape, x: &Var, w: &Var, b: &Var, spec: &ConvTransposeSpec) -> Result<Var> {
    if spec.output_padding >= spec.stride.max(1) {
        return Err(Error::InvalidArgument(format!(
            "output_padding {} must be smaller than stride {}",
            spec.output_padding, spec.stride
        )));
    }
    check_params(
        "conv_transpose2d",
        x,
        w,
        b,
        spec.weight_shape()?,
        spec.in_channels,
        spec.out_channels,
    )?;
    let [n, cin, h, wd] = x.shape().dims();
    let (Some(oh), Some(ow)) = (spec.output_size(h), spec.output_size(wd)) else {
        return Err(Error::InvalidShape {
            op: "conv_transpose2d",
            reason: format!("input {} produces an empty output", x.shape()),
        });
    };
    let cout = spec.out_channels;
    // Window over the *output* image; its patch grid is the input grid.
    let win = Window {
        channels: cout,
        height: oh,
        width: ow,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: h,
        out_w: wd,
    };
    let out_shape = Shape::new(n, cout, oh, ow)?;
    let in_plane = cin * h * wd;
    let out_plane = cout * oh * ow;

    let mut out = vec![0.0f32; out_shape.numel()];
    let mut cols = vec![0.0f32; win.rows() * win.cols()];
    let wmat = Mat::new(w.value().data(), cin, win.rows());
    for i in 0..n {
        let xi = Mat::new(&x.value().data()[i * in_plane..(i + 1) * in_plane], cin, h * wd);
        gemm(wmat.t(), xi, 0.0, &mut cols);
        col2im(&cols, &win, &mut out[i * out_plane..(i + 1) * out_plane]);
    }
    add_bias(&mut out, b.value().data(), oh * ow);
    let out = Tensor::new(out_shape, out)?;

    let (xv, wv) = (x.value().clone(), w.value().clone());
    let backward: BackwardFn = Box::new(move |g, need| {
        let mut cols = vec![0.0f32; win.rows() * win.cols()];
        let wmat = Mat::new(wv.data(), cin, win.rows());
        let mut dx = need[0].then(|| vec![0.0f32; xv.numel()]);
        let mut dw = need[1].then(|| vec![0.0f32; wv.numel()]);
        if dx.is_some() || dw.is_some() {
            for i in 0..n {
                im2col(&g.data()[i * out_plane..(i + 1) * out_plane], &win, &mut cols);
                let gcols = Mat::new(&cols, win.rows(), win.cols());
                if let Some(dx) = dx.as_mut() {
                    gemm(wmat, gcols, 0.0, &mut dx[i * in_plane..(i + 1) * in_plane]);
                }
                if let Some(dw) = dw.as_mut() {
                    let xi = Mat::new(&xv.data()[i * in_plane..(i + 1) * in_plane], cin, h * wd);
                    gemm(xi, gcols.t(), 1.0, dw);
                }
            }
        }
        Ok(vec![
            dx.map(|d| Tensor::new(xv.shape(), d)).transpose()?,
            dw.map(|d| Tensor::new(wv.shape(), d)).transpose()?,
            need[2].then(|| bias_grad(g)),
        ])
    });
    tape.record(OpKind::ConvTranspose2d, &[x, w, b], out, backward)
}
