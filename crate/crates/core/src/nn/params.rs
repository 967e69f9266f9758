use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named registry of every tensor a model owns: trainable parameters and
/// non-trainable buffers (batch norm running statistics, output scaling).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Total element count of trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Overwrites `id` with a tensor of the same shape.
    pub fn assign(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "cannot assign {:?} to {} of shape {:?}",
                value.shape(),
                entry.name,
                entry.value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }
}

/// Glorot-uniform initializer: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("layer shapes have positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn counts_only_trainable() {
        let mut s = ParamStore::new();
        s.add_param("w", Tensor::zeros([3, 4]));
        s.add_buffer("running_mean", Tensor::zeros([4]));
        assert_eq!(s.trainable_count(), 12);
        assert_eq!(s.trainable_ids().count(), 1);
        assert_eq!(s.find("running_mean"), Some(ParamId(1)));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_uniform(&mut rng, &[128, 256], 256, 128);
        let limit = (6.0f64 / 384.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(glorot_uniform(&mut rng, &[128, 256], 256, 128), t);
    }

    #[test]
    fn assign_checks_shape() {
        let mut s = ParamStore::new();
        let id = s.add_param("w", Tensor::zeros([2]));
        assert!(s.assign(id, Tensor::zeros([3])).is_err());
        s.assign(id, Tensor::ones([2])).unwrap();
        assert_eq!(s.get(id).data(), &[1.0, 1.0]);
    }
}
