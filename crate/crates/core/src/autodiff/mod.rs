//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes are
//! appended in evaluation order, so node ids are already a topological order
//! and [`Graph::backward`] simply walks them in reverse.
//!
//! ```
//! use state_vad::autodiff::Graph;
//! use state_vad::Tensor;
//!
//! let g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::scalar(3.0), true);
//! let y = x.mul(x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

pub mod adam;
pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod norm;
pub mod pool;

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use adam::{Adam, AdamConfig};
pub use elementwise::Unary;
pub use norm::BatchStats;

enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Unary(usize, Unary),
    Reshape(usize),
    Narrow { x: usize, axis: usize, start: usize },
    Concat { parts: Vec<usize>, axis: usize },
    SumAll(usize),
    SumAxis { x: usize, axis: usize },
    Softmax { x: usize, axis: usize },
    Conv2d { x: usize, k: usize, b: Option<usize>, stride: usize, pad: usize },
    ConvT2d { x: usize, k: usize, b: Option<usize>, stride: usize, pad: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    BatchNormTrain { x: usize, gamma: usize, beta: usize, cache: norm::NormCache<T> },
    BatchNormEval { x: usize, gamma: usize, beta: usize, cache: norm::NormCache<T> },
    GroupNorm { x: usize, gamma: usize, beta: usize, groups: usize, cache: norm::NormCache<T> },
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Single-writer: a graph is not `Sync`. Independent computations should use
/// independent graphs.
pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real = f32> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` requires one and the
    /// loss depends on it.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// An input node. Gradients are reported for leaves with `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn derived(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var<'_, T> {
        let rg = inputs.iter().any(|&i| self.needs(i));
        self.push(value, op, rg)
    }

    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let out = layout::concat(&refs, axis)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.derived(out, Op::Concat { parts: ids.clone(), axis }, &ids))
    }

    /// Reverse sweep from a scalar `loss`, seeding its gradient with 1.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        self.backward_scaled(loss, T::one())
    }

    /// Reverse sweep seeding the loss gradient with `seed` (i.e. the gradient
    /// of `seed * loss`).
    pub fn backward_scaled(&self, loss: Var<'_, T>, seed: T) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.id].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::full(lv.shape(), seed));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (pid, pg) in backprop(&nodes, node, &g)? {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Parent gradients for one node.
fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
    let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
    let rg = |i: usize| nodes[i].requires_grad;
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, elementwise::sum_to_shape(g, val(*a).shape())?),
            (*b, elementwise::sum_to_shape(g, val(*b).shape())?),
        ],
        Op::Sub(a, b) => {
            let gb = elementwise::sum_to_shape(g, val(*b).shape())?.map(|v| -v);
            vec![(*a, elementwise::sum_to_shape(g, val(*a).shape())?), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let mut out = Vec::with_capacity(2);
            if rg(*a) {
                out.push((*a, elementwise::mul_sum_to_shape(g, val(*b), val(*a).shape())?));
            }
            if rg(*b) {
                out.push((*b, elementwise::mul_sum_to_shape(g, val(*a), val(*b).shape())?));
            }
            out
        }
        Op::Unary(x, op) => vec![(*x, elementwise::unary_backward(val(*x), &node.value, g, *op))],
        Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
        Op::Narrow { x, axis, start } => {
            vec![(*x, layout::narrow_backward(g, val(*x).shape(), *axis, *start))]
        }
        Op::Concat { parts, axis } => {
            let mut start = 0;
            let mut out = Vec::with_capacity(parts.len());
            for &p in parts {
                let len = val(p).shape()[*axis];
                out.push((p, layout::narrow(g, *axis, start, len)?));
                start += len;
            }
            out
        }
        Op::SumAll(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
        Op::SumAxis { x, axis } => vec![(*x, layout::sum_axis_backward(g, val(*x).shape(), *axis))],
        Op::Softmax { axis, x } => vec![(*x, layout::softmax_backward(&node.value, g, *axis))],
        Op::Conv2d { x, k, b, stride, pad } => {
            let (dx, dk, db) =
                conv::conv2d_backward(val(*x), val(*k), g, *stride, *pad, rg(*x), rg(*k))?;
            let mut out = Vec::with_capacity(3);
            out.extend(dx.map(|d| (*x, d)));
            out.extend(dk.map(|d| (*k, d)));
            out.extend(b.map(|b| (b, db)));
            out
        }
        Op::ConvT2d { x, k, b, stride, pad } => {
            let (dx, dk, db) =
                conv::conv_transpose2d_backward(val(*x), val(*k), g, *stride, *pad, rg(*x), rg(*k))?;
            let mut out = Vec::with_capacity(3);
            out.extend(dx.map(|d| (*x, d)));
            out.extend(dk.map(|d| (*k, d)));
            out.extend(b.map(|b| (b, db)));
            out
        }
        Op::MaxPool { x, argmax } => vec![(*x, pool::maxpool2d_backward(val(*x).shape(), argmax, g)?)],
        Op::BatchNormTrain { x, gamma, beta, cache } => {
            let (dx, dg, db) = norm::batch_norm_train_backward(g, val(*gamma), cache)?;
            vec![(*x, dx), (*gamma, dg), (*beta, db)]
        }
        Op::BatchNormEval { x, gamma, beta, cache } => {
            let (dx, dg, db) = norm::batch_norm_eval_backward(g, val(*gamma), cache)?;
            vec![(*x, dx), (*gamma, dg), (*beta, db)]
        }
        Op::GroupNorm { x, gamma, beta, groups, cache } => {
            let (dx, dg, db) = norm::group_norm_backward(g, val(*gamma), cache, *groups)?;
            vec![(*x, dx), (*gamma, dg), (*beta, db)]
        }
    })
}

impl<'g, T: Real> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    /// Borrowed view of the value; do not hold across new operations.
    pub fn value_ref(&self) -> Ref<'_, Tensor<T>> {
        Ref::map(self.graph.nodes.borrow(), |n| n[self.id].value.as_ref())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    fn same_graph(&self, other: &Var<'g, T>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operands belong to different graphs".into()))
        }
    }

    fn binary(self, other: Var<'g, T>, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'g, T>> {
        self.same_graph(&other)?;
        let out = elementwise::broadcast_binary(&self.value(), &other.value(), f)?;
        Ok(self.graph.derived(out, op, &[self.id, other.id]))
    }

    /// Element-wise sum with equal-rank broadcasting.
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn unary(self, op: Unary) -> Var<'g, T> {
        let out = elementwise::unary(&self.value(), op);
        self.graph.derived(out, Op::Unary(self.id, op), &[self.id])
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(Unary::Relu)
    }

    pub fn leaky_relu(self) -> Var<'g, T> {
        self.unary(Unary::LeakyRelu)
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(Unary::Exp)
    }

    pub fn abs(self) -> Var<'g, T> {
        self.unary(Unary::Abs)
    }

    pub fn powf(self, p: f64) -> Var<'g, T> {
        self.unary(Unary::Pow(p))
    }

    pub fn scale(self, c: f64) -> Var<'g, T> {
        self.unary(Unary::Scale(c))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let out = self.value().reshape(shape)?;
        Ok(self.graph.derived(out, Op::Reshape(self.id), &[self.id]))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let out = layout::narrow(&self.value(), axis, start, len)?;
        Ok(self.graph.derived(out, Op::Narrow { x: self.id, axis, start }, &[self.id]))
    }

    pub fn sum(self) -> Var<'g, T> {
        let out = Tensor::scalar(self.value().sum());
        self.graph.derived(out, Op::SumAll(self.id), &[self.id])
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let out = layout::sum_axis(&self.value(), axis)?;
        Ok(self.graph.derived(out, Op::SumAxis { x: self.id, axis }, &[self.id]))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let out = layout::softmax(&self.value(), axis)?;
        Ok(self.graph.derived(out, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// `sum(|x|^p)`, with `p = 2` evaluated as a plain sum of squares.
    pub fn pnorm_pow(self, p: f64) -> Var<'g, T> {
        if p == 2.0 {
            self.powf(2.0).sum()
        } else {
            self.abs().powf(p).sum()
        }
    }

    pub fn conv2d(self, kernel: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        self.same_graph(&kernel)?;
        let bv = bias.map(|b| b.value());
        let out = conv::conv2d(&self.value(), &kernel.value(), bv.as_deref(), stride, pad)?;
        let mut ids = vec![self.id, kernel.id];
        ids.extend(bias.map(|b| b.id));
        let op = Op::Conv2d {
            x: self.id,
            k: kernel.id,
            b: bias.map(|b| b.id),
            stride,
            pad,
        };
        Ok(self.graph.derived(out, op, &ids))
    }

    pub fn conv_transpose2d(
        self,
        kernel: Var<'g, T>,
        bias: Option<Var<'g, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>> {
        self.same_graph(&kernel)?;
        let bv = bias.map(|b| b.value());
        let out = conv::conv_transpose2d(&self.value(), &kernel.value(), bv.as_deref(), stride, pad)?;
        let mut ids = vec![self.id, kernel.id];
        ids.extend(bias.map(|b| b.id));
        let op = Op::ConvT2d {
            x: self.id,
            k: kernel.id,
            b: bias.map(|b| b.id),
            stride,
            pad,
        };
        Ok(self.graph.derived(out, op, &ids))
    }

    pub fn maxpool2d(self) -> Result<Var<'g, T>> {
        let (out, argmax) = pool::maxpool2d(&self.value())?;
        Ok(self.graph.derived(out, Op::MaxPool { x: self.id, argmax }, &[self.id]))
    }

    /// Training-mode batch norm; returns the observed batch statistics so the
    /// caller can update its running estimates.
    pub fn batch_norm_train(self, gamma: Var<'g, T>, beta: Var<'g, T>) -> Result<(Var<'g, T>, BatchStats<T>)> {
        let (out, cache, stats) = norm::batch_norm_train(&self.value(), &gamma.value(), &beta.value())?;
        let op = Op::BatchNormTrain {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            cache,
        };
        Ok((self.graph.derived(out, op, &[self.id, gamma.id, beta.id]), stats))
    }

    pub fn batch_norm_eval(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<Var<'g, T>> {
        let (out, cache) =
            norm::batch_norm_eval(&self.value(), &gamma.value(), &beta.value(), running_mean, running_var)?;
        let op = Op::BatchNormEval {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            cache,
        };
        Ok(self.graph.derived(out, op, &[self.id, gamma.id, beta.id]))
    }

    pub fn group_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, groups: usize) -> Result<Var<'g, T>> {
        let (out, cache) = norm::group_norm(&self.value(), &gamma.value(), &beta.value(), groups)?;
        let op = Op::GroupNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            groups,
            cache,
        };
        Ok(self.graph.derived(out, op, &[self.id, gamma.id, beta.id]))
    }
}
