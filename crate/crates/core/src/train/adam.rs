use crate::autodiff::{Gradients, ParamId};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moments per parameter tensor plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]], learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
        }
    }

    /// One moment pair per trainable tensor of `store`, in id order.
    pub fn for_store(store: &ParamStore, learning_rate: f64) -> Self {
        let shapes: Vec<&[usize]> = store
            .trainable_ids()
            .map(|id| store.get(id).shape())
            .collect();
        Self::new(&shapes, learning_rate)
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }

    /// Bias-corrected update of every trainable tensor of `store`. A
    /// parameter the loss never reached gets a zero gradient.
    pub fn update_store(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        if ids.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                ids.len()
            )));
        }
        self.step += 1;
        for (i, id) in ids.into_iter().enumerate() {
            let zero;
            let g = match grads.param(id) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(store.get(id).shape().to_vec());
                    &zero
                }
            };
            self.apply(i, store.get_mut(id), g)?;
        }
        Ok(())
    }

    fn apply(&mut self, i: usize, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m[i].shape() {
            return Err(Error::shape(format!(
                "parameter {:?}, gradient {:?}, moments {:?} disagree",
                param.shape(),
                grad.shape(),
                self.m[i].shape()
            )));
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = (0..params.len()).find(|&i| params[i].shape() != grads[i].shape()) {
        return Err(Error::shape(format!(
            "parameter {i}: shape {:?} vs gradient {:?}",
            params[i].shape(),
            grads[i].shape()
        )));
    }
    state.step += 1;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.apply(i, p, g)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut s = AdamState::new(&[&[2]], 1e-3);
        adam_step(&mut p, &[Tensor::zeros([2])], &mut s).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut s = AdamState::new(&[&[1]], 1e-3);
        adam_step(&mut p, &[Tensor::vector(vec![1.0])], &mut s).unwrap();
        let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut s = AdamState::new(&[&[1]], 1e-3);
        assert!(matches!(
            adam_step(&mut p, &[Tensor::zeros([2])], &mut s),
            Err(Error::Shape(_))
        ));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn second_moment_nonnegative() {
        let mut p = vec![Tensor::vector(vec![0.0; 3])];
        let mut s = AdamState::new(&[&[3]], 1e-2);
        for k in 0..50 {
            let g = Tensor::vector(vec![(k as f64).sin(), -1.0, 0.5]);
            adam_step(&mut p, &[g], &mut s).unwrap();
            assert!(s.second_moment(0).data().iter().all(|&v| v >= 0.0));
        }
        assert_eq!(s.step, 50);
    }
}
