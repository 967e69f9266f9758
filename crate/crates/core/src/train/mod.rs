//! MSE objective, Adam and the early-stopping fit loop.

mod adam;
mod fit;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use fit::{
    batch_partition, fit, fit_with, EarlyStopping, EpochRecord, StopDecision, TrainConfig,
    TrainingTrace,
};

use crate::autodiff::{Graph, Var};
use crate::error::Result;

/// Mean of squared residuals over every element.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    g.mse(pred, target)
}
