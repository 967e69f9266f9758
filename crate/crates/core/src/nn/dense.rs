use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::{apply_unbatched, glorot_uniform, ParamStore};
use crate::tensor::Tensor;

/// Fully connected layer, `y = W x + b` with `W: (out, in)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_units: usize,
    pub out_units: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_units: usize,
        out_units: usize,
    ) -> Self {
        let w = glorot_uniform(rng, &[out_units, in_units], in_units, out_units);
        Self {
            weight: store.add_param(format!("{name}.weight"), w),
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros([out_units])),
            in_units,
            out_units,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.out_units * (self.in_units + 1)
    }

    /// `x: (N, in)` → `(N, out)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(self.weight, store.get(self.weight));
        let b = g.param(self.bias, store.get(self.bias));
        g.linear(x, w, Some(b))
    }

    /// Rank-1 input of length `in_units`.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.shape() != [self.in_units] {
            return Err(Error::shape(format!(
                "dense layer expects [{}], got {:?}",
                self.in_units,
                x.shape()
            )));
        }
        apply_unbatched(x, |g, xv| self.forward(g, store, xv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use rand::SeedableRng;

    #[test]
    fn identity_weights() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(&mut store, &mut rng, "d", 4, 4);
        store.assign(d.weight, Tensor::eye(4)).unwrap();
        let x = Tensor::vector(vec![1.0, -2.0, 3.5, 0.0]);
        assert_eq!(d.apply(&store, &x).unwrap(), x);
    }

    #[test]
    fn parameter_count_formula() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(&mut store, &mut rng, "out", 128, 3);
        assert_eq!(d.parameter_count(), 387);
        assert_eq!(store.trainable_count(), 387);
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Dense::new(&mut store, &mut rng, "d", 5, 3);
        store.assign(d.bias, random_tensor(&[3], 2, 1.0)).unwrap();
        let x = random_tensor(&[5], 4, 1.0);
        let y = d.apply(&store, &x).unwrap();
        let w = store.get(d.weight);
        for o in 0..3 {
            let mut acc = store.get(d.bias).data()[o];
            for i in 0..5 {
                acc += w.get(&[o, i]) * x.data()[i];
            }
            assert!((y.data()[o] - acc).abs() < 1e-12);
        }
        assert!(matches!(
            d.apply(&store, &Tensor::zeros([4])),
            Err(Error::Shape(_))
        ));
    }
}
