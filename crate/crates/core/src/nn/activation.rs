use crate::autodiff::{BackwardFn, OpKind, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
}

pub fn activation(tape: &Tape, kind: Activation, x: &Var) -> Result<Var> {
    let xv = x.value().clone();
    let (op, out, backward): (OpKind, _, BackwardFn) = match kind {
        Activation::Relu => (
            OpKind::Relu,
            xv.map(|v| v.max(0.0)),
            Box::new(move |g, _| Ok(vec![Some(g.zip_map(&xv, "relu", |g, v| if v > 0.0 { g } else { 0.0 })?)])),
        ),
        Activation::LeakyRelu(slope) => (
            OpKind::LeakyRelu,
            xv.map(|v| if v > 0.0 { v } else { slope * v }),
            Box::new(move |g, _| {
                Ok(vec![Some(g.zip_map(&xv, "leaky_relu", |g, v| if v > 0.0 { g } else { slope * g })?)])
            }),
        ),
        Activation::Tanh => {
            let y = xv.map(f32::tanh);
            let saved = y.clone();
            (
                OpKind::Tanh,
                y,
                Box::new(move |g, _| Ok(vec![Some(g.zip_map(&saved, "tanh", |g, y| g * (1.0 - y * y))?)])),
            )
        }
    };
    tape.record(op, &[x], out, backward)
}

pub fn relu(tape: &Tape, x: &Var) -> Result<Var> {
    activation(tape, Activation::Relu, x)
}

pub fn leaky_relu(tape: &Tape, x: &Var, slope: f32) -> Result<Var> {
    activation(tape, Activation::LeakyRelu(slope), x)
}

pub fn tanh(tape: &Tape, x: &Var) -> Result<Var> {
    activation(tape, Activation::Tanh, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn row(v: &[f32]) -> Tensor {
        Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_values_and_kink() {
        let tape = Tape::new();
        let x = tape.leaf(row(&[-1., 0., 2.]));
        let y = relu(&tape, &x).unwrap();
        assert_eq!(y.value().data(), &[0., 0., 2.]);
        let loss = tape.reduce_mean(&y).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0., 0., 1. / 3.]);
    }

    #[test]
    fn leaky_values() {
        let tape = Tape::new();
        let y = leaky_relu(&tape, &Var::constant(row(&[-1., 2.])), 0.2).unwrap();
        assert_eq!(y.value().data(), &[-0.2, 2.]);
    }

    #[test]
    fn tanh_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(row(&[0.]));
        let y = tanh(&tape, &x).unwrap();
        assert_eq!(y.value().data(), &[0.]);
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.]);
    }
}
