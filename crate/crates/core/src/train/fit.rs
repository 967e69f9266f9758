use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::SampleSource;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Mode, ParamStore};
use crate::train::{mse_loss, AdamState};

/// Samples per eval-mode forward pass.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 150,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 20,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config(
                "epochs, batch size and patience must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::config(format!(
                "patience {} must be below max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

impl TrainingTrace {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct serializes") + "\n")
            .collect()
    }

    pub fn from_json_lines(text: &str) -> Result<Vec<EpochRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::format(format!("trace line {}: {e}", i + 1)))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses; only a strict decrease counts
/// as improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Splits `order` into batches of `batch_size`; a trailing batch of one is
/// merged into its predecessor so batch norm always sees two samples.
pub fn batch_partition(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size.max(1)).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        batches.pop();
        let start = (batches.len() - 1) * batch_size;
        *batches.last_mut().expect("two or more batches") = &order[start..];
    }
    batches
}

fn mean_std(columns: usize, rows: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = (rows.len() / columns) as f64;
    let mut mean = vec![0.0; columns];
    for (i, v) in rows.iter().enumerate() {
        mean[i % columns] += v / n;
    }
    let mut var = vec![0.0; columns];
    for (i, v) in rows.iter().enumerate() {
        var[i % columns] += (v - mean[i % columns]).powi(2) / n;
    }
    let std = var
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

fn all_targets(set: &dyn SampleSource) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::new();
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend_from_slice(set.batch(chunk)?.1.data());
    }
    Ok(out)
}

/// Eval-mode MSE over every sample and target.
pub(crate) fn evaluate_loss(model: &Model, set: &dyn SampleSource) -> Result<f64> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = set.batch(chunk)?;
        let p = model.predict(&x)?;
        sum += p
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        count += y.numel();
    }
    Ok(sum / count as f64)
}

pub fn fit(
    model: &mut Model,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    fit_with(model, train, val, config, |_| {})
}

/// Trains `model` in place and leaves it holding the weights of the best
/// validation epoch. The output affine is first set to the mean and
/// standard deviation of the training targets. `on_epoch` sees every
/// record as it is produced.
pub fn fit_with<F>(
    model: &mut Model,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainingTrace>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::invalid(format!(
            "training needs at least 2 training and 1 validation sample, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let targets = crate::model::Forecaster::spec(model).targets;
    let (mean, std) = mean_std(targets, &all_targets(train)?);
    model.set_output_scaling(&mean, &std)?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_store(model.store(), config.learning_rate);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: ParamStore = model.store().clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, batch) in batch_partition(&order, config.batch_size)
            .into_iter()
            .enumerate()
        {
            let (x, y) = train.batch(batch)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let yv = g.constant(y);
            let (pred, pending) = model.forward(&mut g, xv, Mode::Train)?;
            let loss = mse_loss(&mut g, pred, yv)?;
            let lv = g.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: lv,
                });
            }
            let grads = g.backward(loss)?;
            adam.update_store(model.store_mut(), &grads)?;
            for p in pending {
                p.apply(model.store_mut());
            }
            loss_sum += lv * batch.len() as f64;
            seen += batch.len();
        }
        let val_loss = evaluate_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.store().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    *model.store_mut() = best;
    Ok(TrainingTrace {
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        stopped_early,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increasing_validation_stops_after_patience() {
        let mut s = EarlyStopping::new(20);
        let mut stop_at = None;
        for epoch in 1..=150 {
            if s.observe(epoch, epoch as f64) == StopDecision::Stop {
                stop_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stop_at, Some(21));
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..129).collect();
        let batches = batch_partition(&order, 64);
        assert_eq!(
            batches.iter().map(|b| b.len()).collect::<Vec<_>>(),
            vec![64, 65]
        );
        let order: Vec<usize> = (0..130).collect();
        assert_eq!(batch_partition(&order, 64).len(), 3);
        assert_eq!(batch_partition(&order[..1], 64).len(), 1);
    }

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig {
            patience: 150,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn trace_json_lines_round_trip() {
        let trace = TrainingTrace {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                elapsed_s: 0.1,
            }],
            best_epoch: 1,
            best_val_loss: 0.25,
            stopped_early: false,
            wall_time_s: 0.1,
        };
        let text = trace.to_json_lines();
        assert!(text.starts_with("{\"epoch\":1,\"train_loss\":0.5"));
        assert_eq!(TrainingTrace::from_json_lines(&text).unwrap(), trace.epochs);
    }
}
