use crate::autodiff::{BatchStats, Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::{Mode, ParamStore};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over batch and spatial positions.
///
/// Running statistics follow `running = (1 - momentum) * running +
/// momentum * batch`, using the same biased variance that normalizes the
/// batch, so eval-mode output converges to train-mode output on a repeated
/// batch.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones([channels])),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros([channels])),
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones([channels])),
            channels,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.channels
    }

    /// In train mode also returns the running-statistics update the batch
    /// implies; it takes effect once [`PendingStats::apply`] is called.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<PendingStats>)> {
        let gamma = g.param(self.gamma, store.get(self.gamma));
        let beta = g.param(self.beta, store.get(self.beta));
        match mode {
            Mode::Train => {
                let batch = g.value(x).shape().first().copied().unwrap_or(0);
                if batch < 2 {
                    return Err(Error::invalid(format!(
                        "batch norm in train mode needs a batch of at least 2, got {batch}"
                    )));
                }
                let (y, stats) = g.batch_norm(x, gamma, beta, self.epsilon)?;
                let pending = PendingStats {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    momentum: self.momentum,
                    stats,
                };
                Ok((y, Some(pending)))
            }
            Mode::Eval => {
                let y = g.frozen_norm(
                    x,
                    gamma,
                    beta,
                    store.get(self.running_mean).data(),
                    store.get(self.running_var).data(),
                    self.epsilon,
                )?;
                Ok((y, None))
            }
        }
    }

    /// Normalizes a batch of unbatched `(C, ...)` tensors.
    pub fn apply_batch(
        &self,
        store: &mut ParamStore,
        xs: &[Tensor],
        mode: Mode,
    ) -> Result<Vec<Tensor>> {
        let first = xs.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let refs: Vec<Tensor> = xs
            .iter()
            .map(|t| {
                let mut s = vec![1];
                s.extend_from_slice(t.shape());
                t.reshape(s)
            })
            .collect::<Result<_>>()?;
        let stacked = Tensor::concat(&refs.iter().collect::<Vec<_>>(), 0)?;
        let mut g = Graph::new();
        let xv = g.constant(stacked);
        let (y, pending) = self.forward(&mut g, store, xv, mode)?;
        if let Some(p) = pending {
            p.apply(store);
        }
        let y = g.value(y);
        let per = first.numel();
        y.data()
            .chunks(per)
            .map(|c| Tensor::new(first.shape().to_vec(), c.to_vec()))
            .collect()
    }
}

/// A running-statistics update produced by a training-mode pass.
#[derive(Clone, Debug)]
pub struct PendingStats {
    running_mean: ParamId,
    running_var: ParamId,
    momentum: f64,
    stats: BatchStats,
}

impl PendingStats {
    pub fn apply(self, store: &mut ParamStore) {
        let m = self.momentum;
        for (id, batch) in [
            (self.running_mean, &self.stats.mean),
            (self.running_var, &self.stats.var),
        ] {
            for (r, s) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (1.0 - m) * *r + m * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;

    fn channel_moments(ys: &[Tensor], c: usize) -> (f64, f64) {
        let vals: Vec<f64> = ys
            .iter()
            .flat_map(|y| {
                let inner = y.numel() / y.shape()[0];
                y.data()[c * inner..(c + 1) * inner].to_vec()
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn train_mode_normalizes() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let xs: Vec<Tensor> = (0..4)
            .map(|i| random_tensor(&[3, 2, 2], i, 5.0).map(|v| v + 7.0))
            .collect();
        let ys = bn.apply_batch(&mut store, &xs, Mode::Train).unwrap();
        for c in 0..3 {
            let (mean, var) = channel_moments(&ys, c);
            assert!(mean.abs() < 1e-10, "mean {mean}");
            // epsilon shrinks the variance slightly below 1
            let (_, raw_var) = channel_moments(&xs, c);
            let expected = raw_var / (raw_var + BN_EPSILON);
            assert!((var - expected).abs() < 1e-12);
            assert!((var * (raw_var + BN_EPSILON) / raw_var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        store.assign(bn.beta, Tensor::vector(vec![0.25])).unwrap();
        let xs = vec![Tensor::full([1, 2], 3.0), Tensor::full([1, 2], 3.0)];
        let ys = bn.apply_batch(&mut store, &xs, Mode::Train).unwrap();
        for y in ys {
            assert!(y.data().iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn eval_mode_closed_form() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        store.assign(bn.gamma, Tensor::vector(vec![2.0])).unwrap();
        store.assign(bn.beta, Tensor::vector(vec![1.0])).unwrap();
        let ys = bn
            .apply_batch(&mut store, &[Tensor::vector(vec![1.0])], Mode::Eval)
            .unwrap();
        let expected = 2.0 / (1.0 + BN_EPSILON).sqrt() + 1.0;
        assert!((ys[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn train_needs_two_samples() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let err = bn
            .apply_batch(&mut store, &[Tensor::vector(vec![1.0])], Mode::Train)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn running_stats_converge_to_batch() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        store
            .assign(bn.gamma, Tensor::vector(vec![1.5, 0.5]))
            .unwrap();
        let xs: Vec<Tensor> = (0..8)
            .map(|i| random_tensor(&[2, 2], 100 + i, 3.0).map(|v| v * 2.0 - 1.0))
            .collect();
        let mut train = Vec::new();
        for _ in 0..200 {
            train = bn.apply_batch(&mut store, &xs, Mode::Train).unwrap();
        }
        let eval = bn.apply_batch(&mut store, &xs, Mode::Eval).unwrap();
        for (a, b) in train.iter().zip(&eval) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-3);
            }
        }
        assert!(store.get(bn.running_var).data().iter().all(|&v| v >= 0.0));
    }
}
