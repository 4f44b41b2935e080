//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in execution order, so the record is
//! topologically sorted by construction. [`Var`] is a cheap handle to one
//! recorded value. [`Var::backward`] walks the tape once in reverse and
//! returns the accumulated [`Gradients`]; a fresh tape is used per training
//! step, which is what zeroes gradients between steps.
//!
//! ```
//! use vitse_core::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::scalar::{c, Element};
use crate::tensor::{gelu_grad, Tensor};

/// A user-defined differentiable operation.
pub trait CustomOp<T: Element> {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    /// Gradient with respect to every input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>)
        -> Vec<Tensor<T>>;
}

enum Op<T: Element> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, T),
    Relu(usize),
    Sigmoid(usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    Reshape(usize),
    Row(usize, usize),
    NarrowCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Tensor<T>,
        probs: Tensor<T>,
    },
    Custom(Vec<usize>, Box<dyn CustomOp<T>>),
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> core::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that takes no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Records a [`CustomOp`] applied to `inputs`.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t, T>],
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var<'t, T>> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
            op.forward(&refs)?
        };
        let rg = self.any_requires_grad(&ids);
        Ok(self.push(value, Op::Custom(ids, op), rg))
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        #[cfg(debug_assertions)]
        self.debug_check_finite(&value, &op);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    #[cfg(debug_assertions)]
    fn debug_check_finite(&self, value: &Tensor<T>, op: &Op<T>) {
        if matches!(op, Op::Leaf) {
            return;
        }
        let nodes = self.nodes.borrow();
        let inputs_finite = op_inputs(op).iter().all(|&i| nodes[i].value.all_finite());
        debug_assert!(
            !inputs_finite || value.all_finite(),
            "non-finite output from finite inputs"
        );
    }

    fn any_requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>, op: Op<T>) -> Result<Var<'_, T>> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value)?, nodes[a].requires_grad)
        };
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
        op: Op<T>,
    ) -> Result<Var<'_, T>> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value)?,
                nodes[a].requires_grad || nodes[b].requires_grad,
            )
        };
        Ok(self.push(value, op, rg))
    }

    fn concat(&self, parts: &[Var<'_, T>], rows: bool) -> Result<Var<'_, T>> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
            if rows {
                Tensor::concat_rows(&refs)?
            } else {
                Tensor::concat_cols(&refs)?
            }
        };
        let rg = self.any_requires_grad(&ids);
        let op = if rows {
            Op::ConcatRows(ids)
        } else {
            Op::ConcatCols(ids)
        };
        Ok(self.push(value, op, rg))
    }

    /// Stacks matrices vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        self.concat(parts, true)
    }

    /// Joins matrices side by side.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        self.concat(parts, false)
    }

    fn backward_from(&self, root: usize) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[root].value.len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(nodes[root].value.shape()));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let mut give = |target: usize, delta: Tensor<T>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        give(*a, g.matmul(&val(*b).transpose()?)?);
                    }
                    if nodes[*b].requires_grad {
                        give(*b, val(*a).transpose()?.matmul(&g)?);
                    }
                }
                Op::Transpose(a) => give(*a, g.transpose()?),
                Op::Add(a, b) => {
                    give(*a, g.clone());
                    give(*b, g);
                }
                Op::Mul(a, b) => {
                    give(*a, g.mul(val(*b))?);
                    give(*b, g.mul(val(*a))?);
                }
                Op::AddBias(x, b) => {
                    give(*b, g.sum_leading());
                    give(*x, g);
                }
                Op::Scale(a, k) => give(*a, g.scale(*k)),
                Op::Relu(a) => {
                    let d = g.zip_map(val(*a), "relu", |g, x| if x > T::zero() { g } else { T::zero() })?;
                    give(*a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, "sigmoid", |g, y| g * y * (T::one() - y))?;
                    give(*a, d);
                }
                Op::Gelu(a) => {
                    let d = g.zip_map(val(*a), "gelu", |g, x| g * gelu_grad(x))?;
                    give(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let n = y.last_dim();
                    let mut d = g.mul(y)?;
                    for (drow, yrow) in d.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: T = drow.iter().copied().sum();
                        for (dv, &yv) in drow.iter_mut().zip(yrow) {
                            *dv = *dv - yv * dot;
                        }
                    }
                    give(*a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let n = xhat.last_dim();
                    let gain_v = val(*gain);
                    give(*bias, g.sum_leading());
                    give(*gain, g.mul(xhat)?.sum_leading());
                    if nodes[*x].requires_grad {
                        let nf: T = c(n as f64);
                        let mut dx = g.clone();
                        for ((drow, xrow), &istd) in dx
                            .data_mut()
                            .chunks_mut(n)
                            .zip(xhat.data().chunks(n))
                            .zip(inv_std)
                        {
                            for (dv, &gv) in drow.iter_mut().zip(gain_v.data()) {
                                *dv = *dv * gv;
                            }
                            let sum_d: T = drow.iter().copied().sum();
                            let sum_dx: T = drow.iter().zip(xrow).map(|(&d, &h)| d * h).sum();
                            for (dv, &h) in drow.iter_mut().zip(xrow) {
                                *dv = istd / nf * (nf * *dv - sum_d - h * sum_dx);
                            }
                        }
                        give(*x, dx);
                    }
                }
                Op::Reshape(a) => give(*a, g.reshape(val(*a).shape())?),
                Op::Row(a, index) => {
                    let shape = val(*a).shape();
                    let n = shape[1];
                    let mut d = Tensor::zeros(shape);
                    d.data_mut()[index * n..(index + 1) * n].copy_from_slice(g.data());
                    give(*a, d);
                }
                Op::NarrowCols(a, start) => {
                    let shape = val(*a).shape();
                    let (m, n) = (shape[0], shape[1]);
                    let w = g.shape()[1];
                    let mut d = Tensor::zeros(shape);
                    for i in 0..m {
                        d.data_mut()[i * n + start..i * n + start + w]
                            .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    give(*a, d);
                }
                Op::ConcatCols(ids) => {
                    let mut start = 0;
                    for &p in ids {
                        let w = val(p).shape()[1];
                        give(p, g.narrow_cols(start, w)?);
                        start += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let n = g.shape()[1];
                    let mut offset = 0;
                    for &p in ids {
                        let rows = val(p).shape()[0];
                        let part = Tensor::new(
                            &[rows, n],
                            g.data()[offset * n..(offset + rows) * n].to_vec(),
                        )?;
                        give(p, part);
                        offset += rows;
                    }
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    give(*a, Tensor::full(val(*a).shape(), gv));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let (b, k) = probs.dims2("cross_entropy")?;
                    let scale = g.item() / c(b as f64);
                    let mut d = probs.clone();
                    for ((drow, prow), trow) in d
                        .data_mut()
                        .chunks_mut(k)
                        .zip(probs.data().chunks(k))
                        .zip(targets.data().chunks(k))
                    {
                        let mass: T = trow.iter().copied().sum();
                        for ((dv, &p), &t) in drow.iter_mut().zip(prow).zip(trow) {
                            *dv = (p * mass - t) * scale;
                        }
                    }
                    give(*logits, d);
                }
                Op::Custom(ids, op) => {
                    let refs: Vec<&Tensor<T>> = ids.iter().map(|&i| val(i)).collect();
                    let deltas = op.backward(&refs, &node.value, &g);
                    if deltas.len() != ids.len() {
                        return Err(Error::Contract(alloc::format!(
                            "custom op {} returned {} gradients for {} inputs",
                            op.name(),
                            deltas.len(),
                            ids.len()
                        )));
                    }
                    for (&i, d) in ids.iter().zip(deltas) {
                        if d.shape() != val(i).shape() {
                            return Err(Error::shape("custom backward", val(i).shape(), d.shape()));
                        }
                        give(i, d);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(debug_assertions)]
fn op_inputs<T: Element>(op: &Op<T>) -> Vec<usize> {
    match op {
        Op::Leaf => alloc::vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => alloc::vec![*a, *b],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Gelu(a)
        | Op::Softmax(a)
        | Op::Reshape(a)
        | Op::Row(a, _)
        | Op::NarrowCols(a, _)
        | Op::Sum(a) => alloc::vec![*a],
        Op::LayerNorm { x, gain, bias, .. } => alloc::vec![*x, *gain, *bias],
        Op::ConcatCols(ids) | Op::ConcatRows(ids) | Op::Custom(ids, _) => ids.clone(),
        Op::CrossEntropy { logits, .. } => alloc::vec![*logits],
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `var`. `None` when the loss does
    /// not depend on it or it takes no gradient.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but yields zeros for unreached values.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value_ref().shape()))
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor<T> {
        self.value_ref().clone()
    }

    /// Borrow of the recorded value. Must be released before recording new
    /// operations on the same tape.
    pub fn value_ref(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Self) -> Result<()> {
        if core::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        self.tape
            .binary(self.id, other.id, Tensor::matmul, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Result<Self> {
        self.tape.unary(self.id, Tensor::transpose, Op::Transpose(self.id))
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        self.tape
            .binary(self.id, other.id, Tensor::add, Op::Add(self.id, other.id))
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        self.tape
            .binary(self.id, other.id, Tensor::mul, Op::Mul(self.id, other.id))
    }

    /// Adds a vector to every last-dimension slice.
    pub fn add_bias(self, bias: Self) -> Result<Self> {
        self.same_tape(&bias)?;
        self.tape
            .binary(self.id, bias.id, Tensor::add_bias, Op::AddBias(self.id, bias.id))
    }

    pub fn scale(self, k: T) -> Result<Self> {
        self.tape.unary(self.id, |x| Ok(x.scale(k)), Op::Scale(self.id, k))
    }

    pub fn relu(self) -> Result<Self> {
        self.tape.unary(self.id, |x| Ok(x.relu()), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.tape.unary(self.id, |x| Ok(x.sigmoid()), Op::Sigmoid(self.id))
    }

    pub fn gelu(self) -> Result<Self> {
        self.tape.unary(self.id, |x| Ok(x.gelu()), Op::Gelu(self.id))
    }

    pub fn softmax_lastdim(self) -> Result<Self> {
        self.tape
            .unary(self.id, |x| Ok(x.softmax_lastdim()), Op::Softmax(self.id))
    }

    pub fn layer_norm(self, gain: Self, bias: Self, eps: T) -> Result<Self> {
        self.same_tape(&gain)?;
        self.same_tape(&bias)?;
        let (value, xhat, inv_std, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (y, xhat, inv_std) =
                nodes[self.id]
                    .value
                    .layer_norm(&nodes[gain.id].value, &nodes[bias.id].value, eps)?;
            let rg = nodes[self.id].requires_grad
                || nodes[gain.id].requires_grad
                || nodes[bias.id].requires_grad;
            (y, xhat, inv_std, rg)
        };
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            inv_std,
        };
        Ok(self.tape.push(value, op, rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.tape
            .unary(self.id, |x| x.reshape(shape), Op::Reshape(self.id))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(self, index: usize) -> Result<Self> {
        self.tape
            .unary(self.id, |x| x.row(index), Op::Row(self.id, index))
    }

    pub fn narrow_cols(self, start: usize, width: usize) -> Result<Self> {
        self.tape.unary(
            self.id,
            |x| x.narrow_cols(start, width),
            Op::NarrowCols(self.id, start),
        )
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(self) -> Self {
        self.tape
            .unary(self.id, |x| Ok(Tensor::scalar(x.sum())), Op::Sum(self.id))
            .expect("sum is total")
    }

    /// Mean over the batch of `-sum(target * log_softmax(logits))`. `self`
    /// is `[B x K]`; `targets` rows must be probability distributions.
    pub fn cross_entropy(self, targets: &Tensor<T>) -> Result<Self> {
        let (value, probs, rg) = {
            let nodes = self.tape.nodes.borrow();
            let logits = &nodes[self.id].value;
            let (loss, probs) = crate::loss::cross_entropy_forward(logits, targets)?;
            (Tensor::scalar(loss), probs, nodes[self.id].requires_grad)
        };
        let op = Op::CrossEntropy {
            logits: self.id,
            targets: targets.clone(),
            probs,
        };
        Ok(self.tape.push(value, op, rg))
    }

    /// Runs the backward pass from this scalar.
    pub fn backward(&self) -> Result<Gradients<T>> {
        self.tape.backward_from(self.id)
    }
}
