//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! reverse topological order and [`Graph::backward`] is a single sweep.
//! The graph is meant to be dropped after the backward pass.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{inverse_permutation, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a trainable tensor across graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Permute(Var, Vec<usize>),
    Reshape(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Concat(Vec<Var>, usize),
    ChannelBias(Var, Var),
    Conv2d(Var, Var, usize),
    Depthwise(Var, Var, usize),
    Conv3d(Var, Var),
    ConvTranspose2d(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    /// Batch norm with frozen statistics; only the affine part and the
    /// input carry gradient.
    FrozenNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Permute(x, _)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::Scale(x, _)
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::ChannelBias(a, b)
            | Op::Conv2d(a, b, _)
            | Op::Depthwise(a, b, _)
            | Op::Conv3d(a, b)
            | Op::ConvTranspose2d(a, b)
            | Op::Mse(a, b) => vec![*a, *b],
            Op::Linear(x, w, b) => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Concat(xs, _) => xs.clone(),
            Op::BatchNorm { x, gamma, beta, .. } | Op::FrozenNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Statistics a training-mode batch norm pass produced, for updating
/// running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient (data, fixed scales).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf. Registering the same id twice returns the first node
    /// so shared parameters accumulate into one gradient.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf(value.clone(), true);
        self.params.push((id, v));
        v
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(axes)?;
        Ok(self.push(out, Op::Permute(x, axes.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Rank-1 row-major linearization.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    /// Flattens everything but the leading batch axis.
    pub fn flatten_batch(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let b = *shape
            .first()
            .ok_or_else(|| Error::shape("flatten_batch on a scalar"))?;
        let rest = shape[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::batch_matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::BatchMatMul(a, b)))
    }

    /// `x · wᵀ + b` for `x: (N, in)`, `w: (out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear(x, w, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).relu();
        self.push(out, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn div_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        if s == 0.0 {
            return Err(Error::invalid("division by zero scalar"));
        }
        Ok(self.scale(x, 1.0 / s))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&vals, axis)?;
        Ok(self.push(out, Op::Concat(xs.to_vec(), axis)))
    }

    /// Adds a per-channel bias along axis 1.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = kernels::add_channel_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::ChannelBias(x, bias)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), pad)?;
        Ok(self.push(out, Op::Conv2d(x, w, pad)))
    }

    pub fn depthwise2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let out = kernels::depthwise2d(self.value(x), self.value(w), pad)?;
        Ok(self.push(out, Op::Depthwise(x, w, pad)))
    }

    pub fn conv3d(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = kernels::conv3d(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::Conv3d(x, w)))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = kernels::conv_transpose2d(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::ConvTranspose2d(x, w)))
    }

    /// Training-mode batch norm; also returns the batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let fwd =
            kernels::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let stats = BatchStats {
            mean: fwd.mean,
            var: fwd.var,
        };
        let v = self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized: fwd.normalized,
                inv_std: fwd.inv_std,
            },
        );
        Ok((v, stats))
    }

    /// Batch norm with fixed statistics (inference mode).
    pub fn frozen_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (out, normalized, inv_std) = kernels::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mean,
            var,
            eps,
        )?;
        Ok(self.push(
            out,
            Op::FrozenNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_last(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(out, Op::Mean(x))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.value(pred).sub(self.value(target))?;
        let out =
            Tensor::scalar(diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64);
        Ok(self.push(out, Op::Mse(pred, target)))
    }

    /// Propagates gradients from the scalar `loss` to every node that
    /// requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let contributions = self.local_gradients(node, &dy)?;
            for (parent, g) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(dy);
        }

        let params = self.params.iter().copied().collect();
        Ok(Gradients { grads, params })
    }

    fn local_gradients(&self, node: &Node, dy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Permute(x, axes) => vec![(*x, dy.permute(&inverse_permutation(axes))?)],
            Op::Reshape(x) => vec![(*x, dy.reshape(val(*x).shape().to_vec())?)],
            Op::MatMul(a, b) => {
                let mut v = Vec::new();
                if needs(*a) {
                    v.push((*a, dy.matmul(&val(*b).transpose()?)?));
                }
                if needs(*b) {
                    v.push((*b, val(*a).transpose()?.matmul(dy)?));
                }
                v
            }
            Op::BatchMatMul(a, b) => {
                let (da, db) = kernels::batch_matmul_backward(val(*a), val(*b), dy)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Linear(x, w, b) => {
                let (dx, dw, db) = kernels::linear_backward(val(*x), val(*w), dy)?;
                let mut v = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    v.push((*b, db));
                }
                v
            }
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub(a, b) => vec![(*a, dy.clone()), (*b, dy.scale(-1.0))],
            Op::Mul(a, b) => vec![(*a, dy.mul(val(*b))?), (*b, dy.mul(val(*a))?)],
            Op::Relu(x) => {
                let g = dy
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                vec![(*x, Tensor::from_parts(dy.shape().to_vec(), g))]
            }
            Op::Scale(x, s) => vec![(*x, dy.scale(*s))],
            Op::Concat(xs, axis) => {
                let extents: Vec<usize> = xs.iter().map(|&v| val(v).shape()[*axis]).collect();
                xs.iter().copied().zip(dy.split(*axis, &extents)?).collect()
            }
            Op::ChannelBias(x, b) => vec![(*x, dy.clone()), (*b, kernels::channel_sums(dy)?)],
            Op::Conv2d(x, w, pad) => {
                let (dx, dw) = kernels::conv2d_backward(val(*x), val(*w), *pad, dy)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::Depthwise(x, w, pad) => {
                let (dx, dw) = kernels::depthwise2d_backward(val(*x), val(*w), *pad, dy)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::Conv3d(x, w) => {
                let (dx, dw) = kernels::conv3d_backward(val(*x), val(*w), dy)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::ConvTranspose2d(x, w) => {
                let (dx, dw) = kernels::conv_transpose2d_backward(val(*x), val(*w), dy)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (dx, dg, db) =
                    kernels::batch_norm_train_backward(normalized, inv_std, val(*gamma), dy)?;
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::FrozenNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (b, c, inner) = kernels::channel_layout(dy)?;
                let mut dx = dy.data().to_vec();
                let mut dg = vec![0.0; c];
                for n in 0..b {
                    for ch in 0..c {
                        let base = (n * c + ch) * inner;
                        let scale = val(*gamma).data()[ch] * inv_std[ch];
                        let span = base..base + inner;
                        for ((d, &g), &z) in dx[span.clone()]
                            .iter_mut()
                            .zip(&dy.data()[span.clone()])
                            .zip(&normalized.data()[span])
                        {
                            dg[ch] += g * z;
                            *d *= scale;
                        }
                    }
                }
                vec![
                    (*x, Tensor::from_parts(dy.shape().to_vec(), dx)),
                    (*gamma, Tensor::vector(dg)),
                    (*beta, kernels::channel_sums(dy)?),
                ]
            }
            Op::Softmax(x) => vec![(*x, kernels::softmax_last_backward(&node.value, dy))],
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape().to_vec(), dy.item()?))],
            Op::Mean(x) => {
                let t = val(*x);
                vec![(
                    *x,
                    Tensor::full(t.shape().to_vec(), dy.item()? / t.numel() as f64),
                )]
            }
            Op::Mse(p, t) => {
                let g = dy.item()?;
                let n = val(*p).numel() as f64;
                let d = val(*p).sub(val(*t))?.scale(2.0 * g / n);
                vec![(*t, d.scale(-1.0)), (*p, d)]
            }
        };
        Ok(out)
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient of a node, if any path from the loss reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a node, zero-filled when unreachable.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape().to_vec()))
    }

    /// Gradient of a registered parameter, or `None` if it was not used in
    /// the graph at all.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }
}
