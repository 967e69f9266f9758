use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::{apply_unbatched, glorot_uniform, BatchNorm, Mode, ParamStore, PendingStats};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Zero padding that preserves spatial extents; odd kernels only.
    Same,
}

impl Padding {
    pub fn amount(self, k: usize) -> Result<usize> {
        match self {
            Padding::Valid => Ok(0),
            Padding::Same if k % 2 == 1 => Ok((k - 1) / 2),
            Padding::Same => Err(Error::config(format!(
                "same padding needs an odd kernel, got {k}"
            ))),
        }
    }
}

/// Standard 2D convolution, stride 1, optional bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        bias: bool,
    ) -> Self {
        let kk = kernel * kernel;
        let w = glorot_uniform(
            rng,
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kk,
            out_channels * kk,
        );
        Self {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: bias
                .then(|| store.add_param(format!("{name}.bias"), Tensor::zeros([out_channels]))),
            in_channels,
            out_channels,
            kernel,
            padding,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
            + self.bias.map_or(0, |_| self.out_channels)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(self.weight, store.get(self.weight));
        let y = g.conv2d(x, w, self.padding.amount(self.kernel)?)?;
        match self.bias {
            Some(b) => {
                let bv = g.param(b, store.get(b));
                g.channel_bias(y, bv)
            }
            None => Ok(y),
        }
    }

    /// `x: (C_in, H, W)` → `(C_out, H', W')`.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| self.forward(g, store, xv))
    }
}

/// Per-channel spatial convolution with channel multiplier 1 and no bias.
#[derive(Clone, Debug)]
pub struct Depthwise {
    pub weight: ParamId,
    pub channels: usize,
    pub kernel: usize,
    pub padding: Padding,
}

impl Depthwise {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        kernel: usize,
        padding: Padding,
    ) -> Self {
        let kk = kernel * kernel;
        let w = glorot_uniform(rng, &[channels, kernel, kernel], kk, kk);
        Self {
            weight: store.add_param(format!("{name}.weight"), w),
            channels,
            kernel,
            padding,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(self.weight, store.get(self.weight));
        g.depthwise2d(x, w, self.padding.amount(self.kernel)?)
    }

    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| self.forward(g, store, xv))
    }
}

/// 1×1 convolution mixing channels at each position, no bias.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub weight: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Pointwise {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        let w = glorot_uniform(
            rng,
            &[out_channels, in_channels, 1, 1],
            in_channels,
            out_channels,
        );
        Self {
            weight: store.add_param(format!("{name}.weight"), w),
            in_channels,
            out_channels,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.in_channels * self.out_channels
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(self.weight, store.get(self.weight));
        g.conv2d(x, w, 0)
    }

    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| self.forward(g, store, xv))
    }
}

/// Depthwise → pointwise → batch norm → ReLU.
#[derive(Clone, Debug)]
pub struct DepthwiseSeparable {
    pub depthwise: Depthwise,
    pub pointwise: Pointwise,
    pub norm: BatchNorm,
}

impl DepthwiseSeparable {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        Self {
            depthwise: Depthwise::new(
                store,
                rng,
                &format!("{name}.depthwise"),
                in_channels,
                kernel,
                Padding::Valid,
            ),
            pointwise: Pointwise::new(
                store,
                rng,
                &format!("{name}.pointwise"),
                in_channels,
                out_channels,
            ),
            norm: BatchNorm::new(store, &format!("{name}.bn"), out_channels),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.depthwise.parameter_count()
            + self.pointwise.parameter_count()
            + self.norm.parameter_count()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<PendingStats>)> {
        let d = self.depthwise.forward(g, store, x)?;
        let p = self.pointwise.forward(g, store, d)?;
        let (n, pending) = self.norm.forward(g, store, p, mode)?;
        Ok((g.relu(n), pending))
    }
}

/// Valid 3D convolution with bias over `(C, D, H, W)` volumes.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv3d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        let k3 = kernel * kernel * kernel;
        let w = glorot_uniform(
            rng,
            &[out_channels, in_channels, kernel, kernel, kernel],
            in_channels * k3,
            out_channels * k3,
        );
        Self {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros([out_channels])),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel.pow(3) + 1)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(self.weight, store.get(self.weight));
        let b = g.param(self.bias, store.get(self.bias));
        let y = g.conv3d(x, w)?;
        g.channel_bias(y, b)
    }

    /// `x: (C_in, D, H, W)` → `(C_out, D', H', W')`.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| self.forward(g, store, xv))
    }
}

/// Stride-2, 2×2 transposed convolution with bias; doubles spatial extents.
#[derive(Clone, Debug)]
pub struct TransposedConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl TransposedConv2d {
    pub const KERNEL: usize = 2;

    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        let kk = Self::KERNEL * Self::KERNEL;
        let w = glorot_uniform(
            rng,
            &[in_channels, out_channels, Self::KERNEL, Self::KERNEL],
            in_channels * kk,
            out_channels * kk,
        );
        Self {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros([out_channels])),
            in_channels,
            out_channels,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.in_channels * self.out_channels * Self::KERNEL * Self::KERNEL + self.out_channels
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(self.weight, store.get(self.weight));
        let b = g.param(self.bias, store.get(self.bias));
        let y = g.conv_transpose2d(x, w)?;
        g.channel_bias(y, b)
    }

    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| self.forward(g, store, xv))
    }
}
