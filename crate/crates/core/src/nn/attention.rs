use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{apply_unbatched, Dense, ParamStore};
use crate::tensor::Tensor;

/// Single-head self-attention over spatial positions, concatenated to the
/// input feature maps.
///
/// The `H·W` positions form a sequence of channel vectors. Queries, keys and
/// values are per-position dense projections; the `d_v` channels of
/// `softmax(QKᵀ/√d_k)·V` are appended to the input channels. No positional
/// encoding.
#[derive(Clone, Debug)]
pub struct AttentionAugmentation {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub channels: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

pub struct AttentionOutput {
    /// `(B, C + d_v, H, W)`.
    pub output: Var,
    /// `(B, H·W, H·W)`, rows indexed by query position.
    pub weights: Var,
}

impl AttentionAugmentation {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        key_dim: usize,
        value_dim: usize,
    ) -> Result<Self> {
        if key_dim == 0 || value_dim == 0 {
            return Err(Error::config(
                "attention key and value widths must be at least 1",
            ));
        }
        Ok(Self {
            query: Dense::new(store, rng, &format!("{name}.query"), channels, key_dim),
            key: Dense::new(store, rng, &format!("{name}.key"), channels, key_dim),
            value: Dense::new(store, rng, &format!("{name}.value"), channels, value_dim),
            channels,
            key_dim,
            value_dim,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.query.parameter_count() + self.key.parameter_count() + self.value.parameter_count()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<AttentionOutput> {
        let (b, c, h, w) = match *g.value(x).shape() {
            [b, c, h, w] => (b, c, h, w),
            ref s => {
                return Err(Error::shape(format!(
                    "attention input must be (B, C, H, W), got {s:?}"
                )))
            }
        };
        if c != self.channels {
            return Err(Error::shape(format!(
                "attention expects {} channels, got {c}",
                self.channels
            )));
        }
        let p = h * w;
        let seq = g.reshape(x, &[b, c, p])?;
        let seq = g.permute(seq, &[0, 2, 1])?;
        let rows = g.reshape(seq, &[b * p, c])?;

        let q = self.query.forward(g, store, rows)?;
        let q = g.reshape(q, &[b, p, self.key_dim])?;
        let k = self.key.forward(g, store, rows)?;
        let k = g.reshape(k, &[b, p, self.key_dim])?;
        let v = self.value.forward(g, store, rows)?;
        let v = g.reshape(v, &[b, p, self.value_dim])?;

        let kt = g.permute(k, &[0, 2, 1])?;
        let scores = g.batch_matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (self.key_dim as f64).sqrt());
        let weights = g.softmax(scores)?;

        let attended = g.batch_matmul(weights, v)?;
        let attended = g.permute(attended, &[0, 2, 1])?;
        let attended = g.reshape(attended, &[b, self.value_dim, h, w])?;
        let output = g.concat(&[x, attended], 1)?;
        Ok(AttentionOutput { output, weights })
    }

    /// `x: (C, H, W)` → `(C + d_v, H, W)`.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| Ok(self.forward(g, store, xv)?.output))
    }

    /// Attention weights `(H·W, H·W)` for one sample.
    pub fn weights(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        apply_unbatched(x, |g, xv| Ok(self.forward(g, store, xv)?.weights))
    }
}
