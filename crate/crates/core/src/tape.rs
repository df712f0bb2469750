//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor produced during a forward pass together with
//! the operation that produced it. Values are appended in evaluation order,
//! so the node list is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Leaves registered with `requires_grad` receive their gradient in the
//! tensor's grad slot; nodes whose inputs never touch such a leaf are
//! skipped during the sweep (a frozen backbone costs no backward work).

use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::kernels::{self, Padding};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Relu,
    MaxPool2d,
    Dense,
    Sigmoid,
    Softmax,
    Dropout,
    Reshape,
    Add,
    Mul,
    Sum,
    CrossEntropy,
    BinaryCrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::MaxPool2d,
        OpKind::Dense,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::Dropout,
        OpKind::Reshape,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Sum,
        OpKind::CrossEntropy,
        OpKind::BinaryCrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::MaxPool2d => "maxpool2d",
            OpKind::Dense => "dense",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::Dropout => "dropout",
            OpKind::Reshape => "reshape",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::BinaryCrossEntropy => "binary_cross_entropy",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown op `{s}`")))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { stride: usize, padding: Padding },
    Relu,
    MaxPool2d { k: usize, s: usize, argmax: Vec<usize> },
    Dense,
    Sigmoid,
    Softmax,
    Dropout { mask: Vec<bool>, scale: f64 },
    Reshape,
    Add,
    Mul,
    Sum,
    CrossEntropy,
    BinaryCrossEntropy,
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu => OpKind::Relu,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Dense => OpKind::Dense,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Softmax => OpKind::Softmax,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Reshape => OpKind::Reshape,
            Op::Add => OpKind::Add,
            Op::Mul => OpKind::Mul,
            Op::Sum => OpKind::Sum,
            Op::CrossEntropy => OpKind::CrossEntropy,
            Op::BinaryCrossEntropy => OpKind::BinaryCrossEntropy,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<Var>,
    needs_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Clone, Debug)]
pub struct Tape<T: Element = f32> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it participates in differentiation iff the tensor's
    /// `requires_grad` flag is set.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push_node(Op::Leaf, Vec::new(), needs_grad, tensor)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.input(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.input(tensor.with_requires_grad(true))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.values[var.0]
    }

    /// Gradient stored on a leaf by the last [`Tape::backward`].
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.values[var.0].grad()
    }

    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    pub fn inputs_of(&self, var: Var) -> &[Var] {
        &self.nodes[var.0].inputs
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Test hook: scales every input gradient produced by ops of `kind`.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind, scale: f64) {
        self.fault = Some((kind, scale));
    }

    fn push_node(&mut self, op: Op, inputs: Vec<Var>, needs_grad: bool, value: Tensor<T>) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.values.push(value);
        self.nodes.push(Node {
            op,
            inputs,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor<T>) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(op, inputs, needs_grad, value)
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(Op::Conv2d { stride, padding }, vec![x, weight, bias], y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu(self.value(x));
        self.push(Op::Relu, vec![x], y)
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let (y, argmax) = kernels::maxpool2d(self.value(x), k, s)?;
        Ok(self.push(Op::MaxPool2d { k, s, argmax }, vec![x], y))
    }

    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = kernels::dense(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(Op::Dense, vec![x, weight, bias], y))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = kernels::sigmoid(self.value(x));
        self.push(Op::Sigmoid, vec![x], y)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = kernels::softmax(self.value(x))?;
        Ok(self.push(Op::Softmax, vec![x], y))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`; in eval
    /// mode the input handle is returned unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if mode == Mode::Eval {
            return Ok(x);
        }
        let mask = kernels::dropout_mask(self.value(x).len(), p, rng);
        let scale = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let y = Tensor::new(xv.shape(), kernels::apply_mask(xv.data(), &mask, T::of(scale)))?;
        Ok(self.push(Op::Dropout { mask, scale }, vec![x], y))
    }

    /// Row-major reshape `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let mut y = self.value(x).clone().with_requires_grad(false).reshape(shape)?;
        y.clear_grad();
        Ok(self.push(Op::Reshape, vec![x], y))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let z = kernels::add(self.value(x), self.value(y))?;
        Ok(self.push(Op::Add, vec![x, y], z))
    }

    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        let z = kernels::mul(self.value(x), self.value(y))?;
        Ok(self.push(Op::Mul, vec![x, y], z))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(total))
    }

    /// Mean categorical cross-entropy of `probs` against one-hot `labels`.
    /// Labels are treated as constants.
    pub fn cross_entropy(&mut self, probs: Var, labels: Var) -> Result<Var> {
        let loss = kernels::cross_entropy(self.value(probs), self.value(labels))?;
        Ok(self.push(Op::CrossEntropy, vec![probs, labels], Tensor::scalar(loss)))
    }

    /// Mean element-wise binary cross-entropy, for independent sigmoid units.
    pub fn binary_cross_entropy(&mut self, probs: Var, labels: Var) -> Result<Var> {
        let loss = kernels::binary_cross_entropy(self.value(probs), self.value(labels))?;
        Ok(self.push(Op::BinaryCrossEntropy, vec![probs, labels], Tensor::scalar(loss)))
    }

    /// Backpropagates from the scalar `loss`. Every leaf with
    /// `requires_grad` gets its grad slot overwritten; leaves the loss does
    /// not depend on receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        if self.values[loss.0].len() != 1 {
            return Err(Error::InvalidShape {
                shape: self.values[loss.0].shape().to_vec(),
                reason: "backward needs a scalar loss".into(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut input_grads = self.node_backward(i, &g)?;
            if let Some((kind, scale)) = self.fault {
                if kind == node.op.kind() {
                    for grad in input_grads.iter_mut().flatten() {
                        grad.iter_mut().for_each(|v| *v = *v * T::of(scale));
                    }
                }
            }
            for (input, grad) in node.inputs.iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let len = self.values[i].len();
                let grad = grads[i].take().unwrap_or_else(|| vec![T::zero(); len]);
                self.values[i].set_grad(grad)?;
            }
        }
        Ok(())
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Gradients for each input of node `i` given its output gradient.
    fn node_backward(&self, i: usize, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        let val = |k: usize| &self.values[ins[k].0];
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { stride, padding } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(0), val(1), *stride, *padding, g, self.wants(ins[0]))?;
                vec![dx, Some(dw), Some(db)]
            }
            Op::Relu => vec![Some(kernels::relu_backward(val(0).data(), g))],
            Op::MaxPool2d { argmax, .. } => {
                vec![Some(kernels::maxpool2d_backward(val(0).len(), argmax, g))]
            }
            Op::Dense => {
                let (dx, dw, db) = kernels::dense_backward(val(0), val(1), g, self.wants(ins[0]))?;
                vec![dx, Some(dw), Some(db)]
            }
            Op::Sigmoid => vec![Some(kernels::sigmoid_backward(self.values[i].data(), g))],
            Op::Softmax => {
                let classes = self.values[i].shape()[1];
                vec![Some(kernels::softmax_backward(self.values[i].data(), g, classes))]
            }
            Op::Dropout { mask, scale } => {
                vec![Some(kernels::apply_mask(g, mask, T::of(*scale)))]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Mul => {
                let (x, y) = (val(0).data(), val(1).data());
                vec![
                    Some(g.iter().zip(y).map(|(&a, &b)| a * b).collect()),
                    Some(g.iter().zip(x).map(|(&a, &b)| a * b).collect()),
                ]
            }
            Op::Sum => vec![Some(vec![g[0]; val(0).len()])],
            Op::CrossEntropy => {
                let batch = val(0).shape()[0];
                vec![
                    Some(kernels::cross_entropy_backward(val(0).data(), val(1).data(), batch, g[0])),
                    None,
                ]
            }
            Op::BinaryCrossEntropy => vec![
                Some(kernels::binary_cross_entropy_backward(val(0).data(), val(1).data(), g[0])),
                None,
            ],
        })
    }

    /// Re-evaluates every node from the recorded leaves, reusing saved
    /// dropout masks, and returns the recomputed values in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut out: Vec<Tensor<T>> = Vec::with_capacity(self.values.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| &out[node.inputs[k].0];
            let value = match &node.op {
                Op::Leaf => {
                    let mut v = self.values[i].clone();
                    v.clear_grad();
                    v
                }
                Op::Conv2d { stride, padding } => kernels::conv2d(arg(0), arg(1), arg(2), *stride, *padding)?,
                Op::Relu => kernels::relu(arg(0)),
                Op::MaxPool2d { k, s, .. } => kernels::maxpool2d(arg(0), *k, *s)?.0,
                Op::Dense => kernels::dense(arg(0), arg(1), arg(2))?,
                Op::Sigmoid => kernels::sigmoid(arg(0)),
                Op::Softmax => kernels::softmax(arg(0))?,
                Op::Dropout { mask, scale } => Tensor::new(
                    arg(0).shape(),
                    kernels::apply_mask(arg(0).data(), mask, T::of(*scale)),
                )?,
                Op::Reshape => arg(0).clone().reshape(self.values[i].shape())?,
                Op::Add => kernels::add(arg(0), arg(1))?,
                Op::Mul => kernels::mul(arg(0), arg(1))?,
                Op::Sum => Tensor::scalar(arg(0).data().iter().copied().sum()),
                Op::CrossEntropy => Tensor::scalar(kernels::cross_entropy(arg(0), arg(1))?),
                Op::BinaryCrossEntropy => Tensor::scalar(kernels::binary_cross_entropy(arg(0), arg(1))?),
            };
            out.push(value);
        }
        Ok(out)
    }

    /// Fingerprint of every discrete branch taken in the forward pass:
    /// ReLU signs, max-pool winners, dropout masks and probability clamps.
    /// Two evaluations with equal signatures lie in the same smooth piece of
    /// the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let eps = T::of(kernels::PROB_EPSILON);
        for node in &self.nodes {
            match &node.op {
                Op::Relu => {
                    for v in self.values[node.inputs[0].0].data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                Op::Dropout { mask, .. } => mask.hash(&mut h),
                Op::CrossEntropy | Op::BinaryCrossEntropy => {
                    for p in self.values[node.inputs[0].0].data() {
                        (*p < eps, *p > T::one() - eps).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_grad_is_input() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[3], &[0.5, -1.0, 2.0]));
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.sum(wx);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 2.0, 3.0]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn unreached_param_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let unused = tape.param(t(&[2], &[3.0, 4.0]));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_grad_convention() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[-1.0, 2.0]));
        let y = tape.relu(x);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn add_passes_grad_to_both() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.param(t(&[2, 2], &[0.0; 4]));
        let z = tape.add(x, y).unwrap();
        assert_eq!(tape.value(z).data(), tape.value(x).data());
        let loss = tape.sum(z);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
        assert_eq!(tape.grad(y).unwrap(), &[1.0; 4]);
        assert!(tape.add(x, loss).is_err());
    }

    #[test]
    fn backward_errors() {
        let mut empty = Tape::<f64>::new();
        assert!(empty.backward(Var(0)).is_err());
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = Rng::new(5);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[4, 8], 1.0).unwrap());
        assert_eq!(tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = Rng::new(2024);
        let mut tape = Tape::<f64>::new();
        let n = 100_000;
        let x = tape.constant(Tensor::full(&[n], 1.0).unwrap());
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let data = tape.value(y).data();
        let mean = data.iter().sum::<f64>() / n as f64;
        let zeroed = data.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((zeroed - 0.5).abs() < 0.01, "zeroed {zeroed}");
    }

    #[test]
    fn flatten_row_major() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.flatten(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let back = tape.reshape(y, &[1, 2, 2, 1]).unwrap();
        assert!(tape.value(back).bitwise_eq(tape.value(x)));
    }

    #[test]
    fn nodes_are_topologically_ordered() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1, 4, 4, 1], &[0.3; 16]));
        let w = tape.param(t(&[3, 3, 1, 2], &[0.1; 18]));
        let b = tape.param(t(&[2], &[0.0, 0.1]));
        let c = tape.conv2d(x, w, b, 1, Padding::Same).unwrap();
        let r = tape.relu(c);
        let p = tape.maxpool2d(r, 2, 2).unwrap();
        let s = tape.sum(p);
        for i in 0..tape.len() {
            assert!(tape.inputs_of(Var(i)).iter().all(|v| v.0 < i));
        }
        assert_eq!(tape.op_kind(s), OpKind::Sum);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut rng = Rng::new(9);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 6, 6, 2], |i| (i as f32 * 0.37).sin()).unwrap());
        let w = tape.param(Tensor::from_fn(&[3, 3, 2, 3], |i| (i as f32 * 0.11).cos()).unwrap());
        let b = tape.param(Tensor::from_fn(&[3], |i| i as f32 * 0.01).unwrap());
        let c = tape.conv2d(x, w, b, 1, Padding::Same).unwrap();
        let r = tape.relu(c);
        let d = tape.dropout(r, 0.3, Mode::Train, &mut rng).unwrap();
        let p = tape.maxpool2d(d, 2, 2).unwrap();
        let f = tape.flatten(p).unwrap();
        let _ = tape.sum(f);
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert!(v.bitwise_eq(tape.value(Var(i))), "node {i}");
        }
    }

    #[test]
    fn frozen_branch_is_skipped() {
        let mut tape = Tape::<f64>::new();
        let frozen = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.param(t(&[1], &[0.0]));
        let y = tape.dense(frozen, w, b).unwrap();
        assert!(tape.needs_grad(y));
        assert!(!tape.needs_grad(frozen));
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 2.0]);
    }
}
