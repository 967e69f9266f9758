use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, Var};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::{Forecaster, ModelKind, ModelSpec};
use crate::nn::{
    AttentionAugmentation, Conv2d, Conv3d, Dense, DepthwiseSeparable, Mode, Padding, ParamStore,
    PendingStats, TransposedConv2d,
};
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
pub const HIDDEN_UNITS: usize = 128;
pub const ATTENTION_KEY_DIM: usize = 4;
pub const ATTENTION_VALUE_DIM: usize = 4;

/// Rows per forward pass when predicting a whole set.
const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Debug)]
enum Body {
    Multidim {
        branches: [DepthwiseSeparable; 3],
    },
    Conv2d {
        conv: Conv2d,
        attention: Option<AttentionAugmentation>,
    },
    Upscaling {
        up: TransposedConv2d,
        blocks: [DepthwiseSeparable; 2],
    },
    Conv3d {
        conv: Conv3d,
    },
}

/// `dense(hidden) → ReLU → dense(targets)`, then a fixed per-target affine
/// `y·scale + offset` so the network works in standardized target units
/// while predictions come out raw.
#[derive(Clone, Debug)]
struct Head {
    hidden: Dense,
    output: Dense,
    offset: ParamId,
    scale: ParamId,
}

/// A built network: spec, parameter registry and wiring.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    body: Body,
    head: Head,
}

/// Spatial extents after a valid `KERNEL` convolution.
fn shrink(e: usize) -> usize {
    e + 1 - KERNEL
}

impl Model {
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [c, t, f] = spec.input_shape;
        let maps = spec.feature_maps;
        let rng = &mut rng;
        let (body, flat) = match spec.kind {
            ModelKind::Multidim => {
                let branches = [
                    DepthwiseSeparable::new(&mut store, rng, "branch_ctf", c, maps, KERNEL),
                    DepthwiseSeparable::new(&mut store, rng, "branch_tcf", t, maps, KERNEL),
                    DepthwiseSeparable::new(&mut store, rng, "branch_fct", f, maps, KERNEL),
                ];
                let flat =
                    maps * (shrink(t) * shrink(f) + shrink(c) * shrink(f) + shrink(c) * shrink(t));
                (Body::Multidim { branches }, flat)
            }
            ModelKind::Conv2d | ModelKind::Conv2dAttention => {
                let conv = Conv2d::new(
                    &mut store,
                    rng,
                    "conv",
                    c,
                    maps,
                    KERNEL,
                    Padding::Valid,
                    true,
                );
                let attention = if spec.kind == ModelKind::Conv2dAttention {
                    Some(AttentionAugmentation::new(
                        &mut store,
                        rng,
                        "attention",
                        maps,
                        ATTENTION_KEY_DIM,
                        ATTENTION_VALUE_DIM,
                    )?)
                } else {
                    None
                };
                let channels = maps + attention.as_ref().map_or(0, |a| a.value_dim);
                (
                    Body::Conv2d { conv, attention },
                    channels * shrink(t) * shrink(f),
                )
            }
            ModelKind::Conv2dUpscaling => {
                let up = TransposedConv2d::new(&mut store, rng, "upscale", c, c);
                let blocks = [
                    DepthwiseSeparable::new(&mut store, rng, "block1", c, maps, KERNEL),
                    DepthwiseSeparable::new(&mut store, rng, "block2", maps, maps, KERNEL),
                ];
                let (h, w) = (2 * t + 2 - 2 * KERNEL, 2 * f + 2 - 2 * KERNEL);
                (Body::Upscaling { up, blocks }, maps * h * w)
            }
            ModelKind::Conv3d => {
                let conv = Conv3d::new(&mut store, rng, "conv3d", 1, maps, KERNEL);
                (
                    Body::Conv3d { conv },
                    maps * shrink(c) * shrink(t) * shrink(f),
                )
            }
            ModelKind::Persistence => {
                return Err(Error::config("persistence has no network; use Persistence"))
            }
        };
        let head = Head {
            hidden: Dense::new(&mut store, rng, "dense_hidden", flat, spec.hidden_units),
            output: Dense::new(
                &mut store,
                rng,
                "dense_out",
                spec.hidden_units,
                spec.targets,
            ),
            offset: store.add_buffer("output.offset", Tensor::zeros([spec.targets])),
            scale: store.add_buffer("output.scale", Tensor::ones([spec.targets])),
        };
        Ok(Self {
            spec,
            store,
            body,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Length of the flattened feature vector entering the dense head.
    pub fn flat_features(&self) -> usize {
        self.head.hidden.in_units
    }

    pub fn attention(&self) -> Option<&AttentionAugmentation> {
        match &self.body {
            Body::Conv2d { attention, .. } => attention.as_ref(),
            _ => None,
        }
    }

    /// Multidim branches, in `(C,T,F)`, `(T,C,F)`, `(F,C,T)` view order.
    pub fn branches(&self) -> Option<&[DepthwiseSeparable; 3]> {
        match &self.body {
            Body::Multidim { branches } => Some(branches),
            _ => None,
        }
    }

    pub fn output_scaling(&self) -> (&[f64], &[f64]) {
        (
            self.store.get(self.head.offset).data(),
            self.store.get(self.head.scale).data(),
        )
    }

    /// Sets the fixed output affine. Scales must be positive and finite.
    pub fn set_output_scaling(&mut self, offset: &[f64], scale: &[f64]) -> Result<()> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || offset.iter().any(|o| !o.is_finite())
        {
            return Err(Error::invalid("output scale must be positive and finite"));
        }
        self.store
            .assign(self.head.offset, Tensor::vector(offset.to_vec()))?;
        self.store
            .assign(self.head.scale, Tensor::vector(scale.to_vec()))
    }

    /// `x: (B, C, T, F)` → `(B, targets)` raw-unit predictions, plus the
    /// running-statistics updates of every batch norm in train mode.
    pub fn forward(&self, g: &mut Graph, x: Var, mode: Mode) -> Result<(Var, Vec<PendingStats>)> {
        let shape = g.value(x).shape().to_vec();
        let batch = match shape.as_slice() {
            [b, c, t, f] if [*c, *t, *f] == self.spec.input_shape => *b,
            s => {
                return Err(Error::shape(format!(
                    "{} expects (B, {:?}), got {s:?}",
                    self.spec.kind, self.spec.input_shape
                )))
            }
        };
        let store = &self.store;
        let mut pending = Vec::new();
        let mut keep = |p: Option<PendingStats>| pending.extend(p);
        let features = match &self.body {
            Body::Multidim { branches } => {
                let views = [
                    x,
                    g.permute(x, &[0, 2, 1, 3])?,
                    g.permute(x, &[0, 3, 1, 2])?,
                ];
                let mut flat = Vec::with_capacity(3);
                for (branch, view) in branches.iter().zip(views) {
                    let (y, p) = branch.forward(g, store, view, mode)?;
                    keep(p);
                    flat.push(g.flatten_batch(y)?);
                }
                g.concat(&flat, 1)?
            }
            Body::Conv2d { conv, attention } => {
                let y = conv.forward(g, store, x)?;
                let mut y = g.relu(y);
                if let Some(att) = attention {
                    y = att.forward(g, store, y)?.output;
                }
                g.flatten_batch(y)?
            }
            Body::Upscaling { up, blocks } => {
                let mut y = up.forward(g, store, x)?;
                for block in blocks {
                    let (z, p) = block.forward(g, store, y, mode)?;
                    keep(p);
                    y = z;
                }
                g.flatten_batch(y)?
            }
            Body::Conv3d { conv } => {
                let mut vol = vec![batch, 1];
                vol.extend_from_slice(&self.spec.input_shape);
                let v = g.reshape(x, &vol)?;
                let y = conv.forward(g, store, v)?;
                let y = g.relu(y);
                g.flatten_batch(y)?
            }
        };
        let h = self.head.hidden.forward(g, store, features)?;
        let h = g.relu(h);
        let out = self.head.output.forward(g, store, h)?;
        let tile = |v: &Tensor| {
            let data = (0..batch).flat_map(|_| v.data().iter().copied()).collect();
            Tensor::new(vec![batch, self.spec.targets], data)
        };
        let scale = g.constant(tile(store.get(self.head.scale))?);
        let offset = g.constant(tile(store.get(self.head.offset))?);
        let scaled = g.mul(out, scale)?;
        let y = g.add(scaled, offset)?;
        Ok((y, pending))
    }

    /// Eval-mode prediction for a `(B, C, T, F)` batch.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (y, _) = self.forward(&mut g, xv, Mode::Eval)?;
        Ok(g.value(y).clone())
    }
}

impl Forecaster for Model {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    fn predict_set(&self, set: &WindowSet) -> Result<Tensor> {
        self.check_set(set)?;
        let indices: Vec<usize> = (0..set.len()).collect();
        let mut out = Vec::with_capacity(set.len() * self.spec.targets);
        for chunk in indices.chunks(PREDICT_CHUNK) {
            let (x, _) = set.batch(chunk)?;
            out.extend_from_slice(self.predict(&x)?.data());
        }
        Tensor::new(vec![set.len(), self.spec.targets], out)
    }
}

fn build(kind: ModelKind, input_shape: [usize; 3], targets: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(kind, input_shape, targets)?, seed)
}

/// Three permuted views, each through a depthwise-separable convolution,
/// batch norm and ReLU; flattened, concatenated, then the dense head.
pub fn build_multidim(input_shape: [usize; 3], targets: usize, seed: u64) -> Result<Model> {
    build(ModelKind::Multidim, input_shape, targets, seed)
}

/// Cities as channels: 3×3 valid convolution to 32 maps, ReLU, dense head.
pub fn build_conv2d(input_shape: [usize; 3], targets: usize, seed: u64) -> Result<Model> {
    build(ModelKind::Conv2d, input_shape, targets, seed)
}

/// As [`build_conv2d`] with attention channels appended before flattening.
pub fn build_conv2d_attention(input_shape: [usize; 3], targets: usize, seed: u64) -> Result<Model> {
    build(ModelKind::Conv2dAttention, input_shape, targets, seed)
}

/// 2× transposed convolution followed by two depthwise-separable blocks.
pub fn build_conv2d_upscaling(input_shape: [usize; 3], targets: usize, seed: u64) -> Result<Model> {
    build(ModelKind::Conv2dUpscaling, input_shape, targets, seed)
}

/// One-channel volume `(1, C, T, F)` through a 3×3×3 valid convolution.
pub fn build_conv3d(input_shape: [usize; 3], targets: usize, seed: u64) -> Result<Model> {
    build(ModelKind::Conv3d, input_shape, targets, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;

    const DK: [usize; 3] = [5, 4, 4];
    const NL: [usize; 3] = [7, 6, 6];

    #[test]
    fn flattened_widths() {
        let cases = [
            (ModelKind::Multidim, DK, 256),
            (ModelKind::Multidim, NL, 896),
            (ModelKind::Conv2d, DK, 128),
            (ModelKind::Conv2dAttention, DK, 144),
            (ModelKind::Conv2dUpscaling, DK, 512),
            (ModelKind::Conv2dUpscaling, NL, 2048),
            (ModelKind::Conv3d, DK, 120),
            (ModelKind::Conv3d, NL, 800),
        ];
        for (kind, shape, flat) in cases {
            let m = Model::build(ModelSpec::new(kind, shape, 3).unwrap(), 0).unwrap();
            assert_eq!(m.flat_features(), flat, "{kind} {shape:?}");
        }
    }

    #[test]
    fn batch_shape_contract() {
        for kind in ModelKind::TRAINABLE {
            for (shape, targets) in [(DK, 3), (NL, 7)] {
                let m = Model::build(ModelSpec::new(kind, shape, targets).unwrap(), 1).unwrap();
                let mut s = vec![3];
                s.extend_from_slice(&shape);
                let y = m.predict(&random_tensor(&s, 9, 1.0)).unwrap();
                assert_eq!(y.shape(), &[3, targets]);
                assert!(y.is_finite());
            }
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = build_conv2d(DK, 3, 0).unwrap();
        assert!(m.predict(&Tensor::zeros([2, 7, 6, 6])).is_err());
    }

    #[test]
    fn output_scaling_is_applied() {
        let mut m = build_conv3d(DK, 3, 4).unwrap();
        let x = random_tensor(&[2, 5, 4, 4], 1, 1.0);
        let base = m.predict(&x).unwrap();
        m.set_output_scaling(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0])
            .unwrap();
        let y = m.predict(&x).unwrap();
        for (i, (a, b)) in base.data().iter().zip(y.data()).enumerate() {
            assert!((a * 2.0 + [1.0, 2.0, 3.0][i % 3] - b).abs() < 1e-12);
        }
        assert!(m.set_output_scaling(&[0.0; 3], &[0.0; 3]).is_err());
        assert_eq!(m.parameter_count(), 16155);
    }
}
