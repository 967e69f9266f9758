//! Parameterized layers.
//!
//! Layers hold [`ParamId`](crate::autodiff::ParamId)s into a shared
//! [`ParamStore`]; their `forward` methods take batched inputs with a leading
//! batch axis and record onto a [`Graph`](crate::autodiff::Graph). Each layer
//! also has an `apply` helper that evaluates one unbatched sample without
//! recording gradients.

mod attention;
mod conv;
mod dense;
mod norm;
mod params;

pub use attention::AttentionAugmentation;
pub use conv::{
    Conv2d, Conv3d, Depthwise, DepthwiseSeparable, Padding, Pointwise, TransposedConv2d,
};
pub use dense::Dense;
pub use norm::{BatchNorm, PendingStats, BN_EPSILON, BN_MOMENTUM};
pub use params::{glorot_uniform, ParamStore};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Runs `f` on a single sample by adding and then removing a batch axis of 1.
pub(crate) fn apply_unbatched<F>(x: &Tensor, f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let mut g = Graph::new();
    let xv = g.constant(x.reshape(shape)?);
    let out = f(&mut g, xv)?;
    let y = g.value(out);
    y.reshape(y.shape()[1..].to_vec())
}
