use crate::autodiff::{BackwardFn, OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Mirror index for position `i` of a padded axis of length `len + 2p`.
fn mirror(i: usize, p: usize, len: usize) -> usize {
    let pos = i as isize - p as isize;
    if pos < 0 {
        (-pos) as usize
    } else if pos as usize >= len {
        2 * (len - 1) - pos as usize
    } else {
        pos as usize
    }
}

/// Pads every spatial border by `p` pixels, mirroring without repeating the edge.
pub fn reflection_pad(tape: &Tape, x: &Var, p: usize) -> Result<Var> {
    let [n, c, h, w] = x.shape().dims();
    if p >= h || p >= w {
        return Err(Error::InvalidShape {
            op: "reflection_pad",
            reason: format!("padding {p} must be smaller than the spatial size of {}", x.shape()),
        });
    }
    if p == 0 {
        return Ok(x.clone());
    }
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let rows: Vec<usize> = (0..ph).map(|i| mirror(i, p, h)).collect();
    let cols: Vec<usize> = (0..pw).map(|j| mirror(j, p, w)).collect();
    let out_shape = Shape::new(n, c, ph, pw)?;

    let mut out = Vec::with_capacity(out_shape.numel());
    for plane in x.value().data().chunks_exact(h * w) {
        for &r in &rows {
            let src = &plane[r * w..(r + 1) * w];
            out.extend(cols.iter().map(|&j| src[j]));
        }
    }
    let out = Tensor::new(out_shape, out)?;

    let in_shape = x.shape();
    let backward: BackwardFn = Box::new(move |g, _| {
        let mut dx = vec![0.0f32; in_shape.numel()];
        for (dplane, gplane) in dx.chunks_exact_mut(h * w).zip(g.data().chunks_exact(ph * pw)) {
            for (i, &r) in rows.iter().enumerate() {
                let grow = &gplane[i * pw..(i + 1) * pw];
                let drow = &mut dplane[r * w..(r + 1) * w];
                for (&j, &gv) in cols.iter().zip(grow) {
                    drow[j] += gv;
                }
            }
        }
        Ok(vec![Some(Tensor::new(in_shape, dx)?)])
    });
    tape.record(OpKind::ReflectionPad, &[x], out, backward)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_padding_is_identity() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::from_fn(Shape::new(1, 1, 3, 3).unwrap(), |i| i as f32));
        let y = reflection_pad(&tape, &x, 0).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn mirrors_one_row() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::from_vec([1, 1, 2, 3], vec![1., 2., 3., 1., 2., 3.]).unwrap());
        let y = reflection_pad(&tape, &x, 1).unwrap();
        assert_eq!(y.shape().dims(), [1, 1, 4, 5]);
        assert_eq!(&y.value().data()[5..10], &[2., 1., 2., 3., 2.]);
    }

    #[test]
    fn rejects_padding_too_large() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::zeros(Shape::new(1, 1, 3, 5).unwrap()));
        assert!(reflection_pad(&tape, &x, 3).is_err());
    }

    #[test]
    fn crop_undoes_pad() {
        let tape = Tape::new();
        let x = Tensor::from_fn(Shape::new(2, 3, 5, 6).unwrap(), |i| (i as f32).sin());
        let y = reflection_pad(&tape, &Var::constant(x.clone()), 2).unwrap();
        assert_eq!(y.value().crop(2).unwrap(), x);
    }
}
