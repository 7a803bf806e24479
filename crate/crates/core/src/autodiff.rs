//! Define-by-run reverse-mode differentiation.
//!
//! Every differentiable operation records a node on a [`Tape`] holding the ids
//! of its inputs and a backward closure that owns whatever forward values it
//! needs. Nodes are appended in execution order, so the node list is already
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.
//!
//! A [`Var`] without a node is a constant: operations whose inputs are all
//! constants produce constants and record nothing, which is also how values
//! are detached from a graph.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Square,
    Abs,
    Scale,
    Softplus,
    Mean,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm,
    Relu,
    LeakyRelu,
    Tanh,
    ReflectionPad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Square,
    Abs,
    Scale(f32),
    /// `ln(1 + e^x)`, used by the log-form adversarial losses.
    Softplus,
}

/// Receives the upstream gradient and a flag per input telling whether that
/// input needs a gradient; returns one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Result<Vec<Option<Tensor>>>>;

struct Node {
    kind: OpKind,
    inputs: Vec<Option<NodeId>>,
    backward: Option<BackwardFn>,
}

#[derive(Clone, Debug)]
pub struct Var {
    value: Tensor,
    node: Option<(u64, NodeId)>,
}

impl Var {
    pub fn constant(value: Tensor) -> Self {
        Var { value, node: None }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node.map(|(_, id)| id)
    }

    pub fn is_constant(&self) -> bool {
        self.node.is_none()
    }

    /// A constant copy of this value, cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.value.clone())
    }
}

pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.borrow().iter().map(|n| n.kind).collect()
    }

    /// Registers a differentiable input (a parameter or a probed tensor).
    pub fn leaf(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            kind: OpKind::Leaf,
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            value,
            node: Some((self.id, id)),
        }
    }

    pub(crate) fn record(
        &self,
        kind: OpKind,
        inputs: &[&Var],
        value: Tensor,
        backward: BackwardFn,
    ) -> Result<Var> {
        let mut ids = Vec::with_capacity(inputs.len());
        for v in inputs {
            match v.node {
                Some((tape, id)) if tape == self.id => ids.push(Some(id)),
                Some(_) => return Err(Error::ForeignTape),
                None => ids.push(None),
            }
        }
        if ids.iter().all(Option::is_none) {
            return Ok(Var::constant(value));
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            kind,
            inputs: ids,
            backward: Some(backward),
        });
        Ok(Var {
            value,
            node: Some((self.id, id)),
        })
    }

    fn check_owned(&self, v: &Var) -> Result<()> {
        match v.node {
            Some((tape, _)) if tape != self.id => Err(Error::ForeignTape),
            _ => Ok(()),
        }
    }

    pub fn ewise(&self, kind: EwiseKind, a: &Var, b: &Var) -> Result<Var> {
        self.check_owned(a)?;
        self.check_owned(b)?;
        let (op, f): (&'static str, fn(f32, f32) -> f32) = match kind {
            EwiseKind::Add => ("add", |x, y| x + y),
            EwiseKind::Sub => ("sub", |x, y| x - y),
            EwiseKind::Mul => ("mul", |x, y| x * y),
        };
        let out = a.value.zip_map(&b.value, op, f)?;
        let (op_kind, backward): (OpKind, BackwardFn) = match kind {
            EwiseKind::Add => (
                OpKind::Add,
                Box::new(|g, _| Ok(vec![Some(g.clone()), Some(g.clone())])),
            ),
            EwiseKind::Sub => (
                OpKind::Sub,
                Box::new(|g, need| {
                    Ok(vec![Some(g.clone()), need[1].then(|| g.map(|v| -v))])
                }),
            ),
            EwiseKind::Mul => {
                let (av, bv) = (a.value.clone(), b.value.clone());
                (
                    OpKind::Mul,
                    Box::new(move |g, need| {
                        let ga = if need[0] { Some(g.zip_map(&bv, "mul", |g, b| g * b)?) } else { None };
                        let gb = if need[1] { Some(g.zip_map(&av, "mul", |g, a| g * a)?) } else { None };
                        Ok(vec![ga, gb])
                    }),
                )
            }
        };
        self.record(op_kind, &[a, b], out, backward)
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.ewise(EwiseKind::Add, a, b)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.ewise(EwiseKind::Sub, a, b)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.ewise(EwiseKind::Mul, a, b)
    }

    pub fn map_unary(&self, kind: UnaryKind, a: &Var) -> Result<Var> {
        self.check_owned(a)?;
        let x = a.value.clone();
        let (op_kind, out, backward): (OpKind, Tensor, BackwardFn) = match kind {
            UnaryKind::Neg => (OpKind::Neg, x.map(|v| -v), Box::new(|g, _| Ok(vec![Some(g.map(|v| -v))]))),
            UnaryKind::Square => (
                OpKind::Square,
                x.map(|v| v * v),
                Box::new(move |g, _| Ok(vec![Some(g.zip_map(&x, "square", |g, v| 2.0 * v * g)?)])),
            ),
            UnaryKind::Abs => (
                OpKind::Abs,
                x.map(f32::abs),
                // abs'(0) = 0
                Box::new(move |g, _| {
                    Ok(vec![Some(g.zip_map(&x, "abs", |g, v| {
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })?)])
                }),
            ),
            UnaryKind::Scale(c) => (
                OpKind::Scale,
                x.map(|v| c * v),
                Box::new(move |g, _| Ok(vec![Some(g.map(|v| c * v))])),
            ),
            UnaryKind::Softplus => (
                OpKind::Softplus,
                x.map(softplus),
                Box::new(move |g, _| Ok(vec![Some(g.zip_map(&x, "softplus", |g, v| g * sigmoid(v))?)])),
            ),
        };
        self.record(op_kind, &[a], out, backward)
    }

    pub fn neg(&self, a: &Var) -> Result<Var> {
        self.map_unary(UnaryKind::Neg, a)
    }

    pub fn square(&self, a: &Var) -> Result<Var> {
        self.map_unary(UnaryKind::Square, a)
    }

    pub fn abs(&self, a: &Var) -> Result<Var> {
        self.map_unary(UnaryKind::Abs, a)
    }

    pub fn scale(&self, a: &Var, c: f32) -> Result<Var> {
        self.map_unary(UnaryKind::Scale(c), a)
    }

    pub fn softplus(&self, a: &Var) -> Result<Var> {
        self.map_unary(UnaryKind::Softplus, a)
    }

    /// Mean over every element, returned as a `1x1x1x1` tensor.
    pub fn reduce_mean(&self, a: &Var) -> Result<Var> {
        self.check_owned(a)?;
        let shape = a.shape();
        let out = Tensor::scalar(a.value.mean() as f32);
        let backward: BackwardFn = Box::new(move |g, _| {
            let share = g.item() / shape.numel() as f32;
            Ok(vec![Some(Tensor::full(shape, share))])
        });
        self.record(OpKind::Mean, &[a], out, backward)
    }

    /// Reverse sweep from a scalar loss. The returned map holds the gradient
    /// of every leaf the loss depends on.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if !loss.shape().is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape()));
        }
        self.check_owned(loss)?;
        let mut leaf_grads = HashMap::new();
        let Some(root) = loss.node() else {
            return Ok(Gradients {
                tape: self.id,
                grads: leaf_grads,
            });
        };

        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        pending[root.0] = Some(Tensor::ones(Shape::scalar()));

        for idx in (0..=root.0).rev() {
            let Some(grad) = pending[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            let Some(backward) = &node.backward else {
                leaf_grads.insert(NodeId(idx), grad);
                continue;
            };
            let need: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&grad, &need)?;
            for (slot, g) in node.inputs.iter().zip(input_grads) {
                let (Some(id), Some(g)) = (slot, g) else {
                    continue;
                };
                match &mut pending[id.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    empty => *empty = Some(g),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaf_grads,
        })
    }
}

#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient for a leaf variable; `None` if the loss does not depend on it.
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        match v.node {
            Some((tape, id)) if tape == self.tape => self.grads.get(&id),
            _ => None,
        }
    }

    /// Gradient for a leaf, or zeros of the leaf's shape when unreachable.
    pub fn get_or_zeros(&self, v: &Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the worst error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` at `x` with central differences
/// over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f32) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, eps, &coords)
}

/// Like [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor, eps: f32, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("grad_check eps must be > 0, got {eps}")));
    }
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let loss = f(&tape, &input)?;
    let grads = tape.backward(&loss)?;
    let analytic = grads.get_or_zeros(&input);
    drop(tape);

    let eval = |t: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let out = f(&tape, &Var::constant(t))?;
        if !out.shape().is_scalar() {
            return Err(Error::NonScalarLoss(out.shape()));
        }
        Ok(out.value().item() as f64)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::InvalidArgument(format!(
                "grad_check coordinate {i} out of range for {}",
                x.shape()
            )));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps as f64);
        let a = analytic.data()[i] as f64;
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn add_hand_arithmetic() {
        let tape = Tape::new();
        let out = tape.add(&Var::constant(t(&[1., 2.])), &Var::constant(t(&[3., 4.]))).unwrap();
        assert_eq!(out.value().data(), &[4., 6.]);
    }

    #[test]
    fn ewise_shape_mismatch_reports_both() {
        let tape = Tape::new();
        let err = tape
            .add(&Var::constant(t(&[1., 2.])), &Var::constant(t(&[1., 2., 3.])))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x1x1x2") && msg.contains("1x1x1x3"), "{msg}");
    }

    #[test]
    fn mul_by_zeros_annihilates_value_and_grad() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1.5, -2.0, 3.0]));
        let z = Var::constant(t(&[0., 0., 0.]));
        let prod = tape.mul(&x, &z).unwrap();
        assert_eq!(prod.value().data(), &[0., 0., 0.]);
        let loss = tape.reduce_mean(&prod).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0., 0., 0.]);
    }

    #[test]
    fn mul_product_rule() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2.]));
        let b = Var::constant(t(&[5.]));
        let loss = tape.mul(&a, &b).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[5.]);
    }

    #[test]
    fn sub_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2.]));
        let b = tape.leaf(t(&[7.]));
        let loss = tape.sub(&a, &b).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[1.]);
        assert_eq!(g.get(&b).unwrap().data(), &[-1.]);
    }

    #[test]
    fn unary_values() {
        let tape = Tape::new();
        let sq = tape.square(&Var::constant(t(&[-2., 3.]))).unwrap();
        assert_eq!(sq.value().data(), &[4., 9.]);
        let ab = tape.abs(&Var::constant(t(&[-1.5, 0., 2.]))).unwrap();
        assert_eq!(ab.value().data(), &[1.5, 0., 2.]);
        let sc = tape.scale(&Var::constant(t(&[0.1])), 10.0).unwrap();
        assert!((sc.value().data()[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn abs_gradient_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[-1., 0., 2.]));
        let a = tape.abs(&x).unwrap();
        let loss = tape.reduce_mean(&a).unwrap();
        let g = tape.backward(&loss).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(g.get(&x).unwrap().data(), &[-third, 0.0, third]);
    }

    #[test]
    fn mean_values_and_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1., 2., 3., 4.]));
        let m = tape.reduce_mean(&x).unwrap();
        assert_eq!(m.value().item(), 2.5);
        let g = tape.backward(&m).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0.25; 4]);

        let c = Tensor::full(Shape::new(2, 3, 4, 5).unwrap(), 1.75);
        let mc = tape.reduce_mean(&Var::constant(c)).unwrap();
        assert_eq!(mc.value().item(), 1.75);
    }

    #[test]
    fn square_mean_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3.]));
        let sq = tape.square(&x).unwrap();
        let loss = tape.reduce_mean(&sq).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[6.]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1., -1., 0.5, 2.]));
        let s = tape.add(&x, &x).unwrap();
        let loss = tape.reduce_mean(&s).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0.5; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1., 2.]));
        assert!(matches!(tape.backward(&x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn foreign_tape_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(t(&[1.]));
        assert!(matches!(b.square(&x), Err(Error::ForeignTape)));
    }

    #[test]
    fn constants_record_nothing() {
        let tape = Tape::new();
        let c = Var::constant(t(&[1., 2.]));
        let out = tape.square(&c).unwrap();
        assert!(out.is_constant());
        assert!(tape.is_empty());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f32.ln()).abs() < 1e-7);
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) >= 0.0 && softplus(-100.0) < 1e-40);
    }

    #[test]
    fn grad_check_linear_function_is_tiny() {
        let x = Tensor::from_fn(Shape::new(1, 1, 2, 3).unwrap(), |i| i as f32 * 0.1 - 0.2);
        let r = grad_check(|tape, v| tape.reduce_mean(v), &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|tape, v| tape.reduce_mean(v), &x, 0.0).is_err());
    }
}
