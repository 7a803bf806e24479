//! Low-level convolution kernels: patch unrolling and the matrix product.

/// Geometry of one convolution window sweep over a single `(C, H, W)` image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate hit by output position `o` at kernel tap `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Output positions `lo..hi` whose tap `k` lands inside `0..limit`, and
    /// the input coordinate hit by `lo`.
    #[inline]
    fn valid(&self, k: usize, limit: usize, out_len: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let lo = self.padding.saturating_sub(k).div_ceil(s);
        let hi = ((limit + self.padding).saturating_sub(k)).div_ceil(s).min(out_len);
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * s + k - self.padding)
    }
}

/// Unrolls zero-padded patches of `image` into a `rows x cols` matrix.
pub(crate) fn im2col(image: &[f32], win: &Window, cols: &mut [f32]) {
    debug_assert_eq!(image.len(), win.channels * win.height * win.width);
    debug_assert_eq!(cols.len(), win.rows() * win.cols());
    let k = win.kernel;
    let s = win.stride;
    let ncols = win.cols();
    for c in 0..win.channels {
        let plane = &image[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (lo, hi, ix0) = win.valid(kx, win.width, win.out_w);
                for oy in 0..win.out_h {
                    let line = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    match win.source(oy, ky, win.height) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let src = &plane[iy * win.width..(iy + 1) * win.width];
                            line[..lo].fill(0.0);
                            line[hi..].fill(0.0);
                            if s == 1 {
                                line[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                            } else {
                                for (v, &x) in line[lo..hi].iter_mut().zip(src[ix0..].iter().step_by(s)) {
                                    *v = x;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a `rows x cols` patch matrix back onto `image`; the adjoint of [`im2col`].
pub(crate) fn col2im(cols: &[f32], win: &Window, image: &mut [f32]) {
    debug_assert_eq!(image.len(), win.channels * win.height * win.width);
    debug_assert_eq!(cols.len(), win.rows() * win.cols());
    let k = win.kernel;
    let s = win.stride;
    let ncols = win.cols();
    for c in 0..win.channels {
        let plane = &mut image[c * win.height * win.width..(c + 1) * win.height * win.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi, ix0) = win.valid(kx, win.width, win.out_w);
                if lo >= hi {
                    continue;
                }
                for oy in 0..win.out_h {
                    let Some(iy) = win.source(oy, ky, win.height) else {
                        continue;
                    };
                    let dst = &mut plane[iy * win.width..(iy + 1) * win.width];
                    let line = &src[oy * win.out_w + lo..oy * win.out_w + hi];
                    if s == 1 {
                        for (d, &v) in dst[ix0..ix0 + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[ix0..].iter_mut().step_by(s).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix operand: `(data, rows, cols, transposed)`.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out` with `out` row-major `m x n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f32, out: &mut [f32]) {
    let (m, k) = a.logical();
    let (kb, n) = b.logical();
    assert_eq!(k, kb, "gemm inner dimensions disagree");
    assert_eq!(out.len(), m * n, "gemm output has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the slices cover exactly the m*k, k*n and m*n elements addressed
    // through the strides computed above; `out` does not alias the inputs.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
