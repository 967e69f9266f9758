//! Error metrics, evaluation and report rendering.

mod report;

pub use report::{
    emit_predictions, emit_report, reports_from_csv, reports_from_json, ReportFormat, CSV_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::data::{content_hash, WindowSet};
use crate::error::{Error, Result};
use crate::model::{Forecaster, ModelKind};
use crate::tensor::Tensor;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::invalid(format!(
            "metric needs equal nonzero lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Mean squared error.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// Per-city and city-averaged errors of one model at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub model: ModelKind,
    pub horizon: u32,
    pub cities: Vec<String>,
    pub mae: Vec<f64>,
    pub mse: Vec<f64>,
    pub avg_mae: f64,
    pub avg_mse: f64,
    pub params: usize,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub samples: usize,
    pub filled_cells: usize,
    pub data_hash: String,
    pub config_digest: String,
}

impl ExperimentReport {
    /// Builds a report from per-city errors; the averages are their
    /// unweighted means.
    pub fn from_city_errors(
        meta: &ReportMeta,
        model: ModelKind,
        params: usize,
        cities: Vec<String>,
        mae: Vec<f64>,
        mse: Vec<f64>,
    ) -> Self {
        let n = cities.len() as f64;
        Self {
            dataset: meta.dataset.clone(),
            model,
            horizon: meta.horizon,
            avg_mae: mae.iter().sum::<f64>() / n,
            avg_mse: mse.iter().sum::<f64>() / n,
            cities,
            mae,
            mse,
            params,
            seed: meta.seed,
            epochs: meta.epochs,
            samples: 0,
            filled_cells: 0,
            data_hash: String::new(),
            config_digest: meta.config_digest.clone(),
        }
    }
}

/// Run metadata attached to a report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportMeta {
    pub dataset: String,
    pub horizon: u32,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub config_digest: String,
}

/// Per-city errors between `(N, K)` targets and predictions.
pub fn city_errors(targets: &Tensor, predictions: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if targets.shape() != predictions.shape() || targets.rank() != 2 {
        return Err(Error::config(format!(
            "predictions {:?} do not match targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let k = targets.shape()[1];
    let column = |t: &Tensor, c: usize| {
        t.data()
            .iter()
            .skip(c)
            .step_by(k)
            .copied()
            .collect::<Vec<_>>()
    };
    let mut maes = Vec::with_capacity(k);
    let mut mses = Vec::with_capacity(k);
    for c in 0..k {
        let (y, p) = (column(targets, c), column(predictions, c));
        maes.push(mae(&y, &p)?);
        mses.push(mse(&y, &p)?);
    }
    Ok((maes, mses))
}

/// Predicts `set` with `model` and scores it in raw units.
pub fn evaluate(
    model: &dyn Forecaster,
    set: &WindowSet,
    meta: &ReportMeta,
) -> Result<ExperimentReport> {
    let predictions = model.predict_set(set)?;
    evaluate_predictions(model, set, &predictions, meta)
}

/// Scores precomputed `(N, targets)` predictions.
pub fn evaluate_predictions(
    model: &dyn Forecaster,
    set: &WindowSet,
    predictions: &Tensor,
    meta: &ReportMeta,
) -> Result<ExperimentReport> {
    let (maes, mses) = city_errors(&set.targets(), predictions)?;
    let table = set.source().table();
    let mut report = ExperimentReport::from_city_errors(
        meta,
        model.spec().kind,
        model.parameter_count(),
        table.schema().targets.clone(),
        maes,
        mses,
    );
    report.samples = set.len();
    report.filled_cells = table.report().filled_cells();
    report.data_hash = table.report().content_hash.clone();
    Ok(report)
}

/// Digest of any serializable configuration: the git-style content hash of
/// its JSON form.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    content_hash(&serde_json::to_vec(config).expect("configuration serializes"))
}

/// Mean per-city MAE over `horizons`, one report per horizon, all for the
/// same dataset, model and cities.
pub fn per_city_mean_over_horizons(
    reports: &[ExperimentReport],
    horizons: &[u32],
) -> Result<Vec<(String, f64)>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no reports"))?;
    if reports
        .iter()
        .any(|r| r.dataset != first.dataset || r.model != first.model || r.cities != first.cities)
    {
        return Err(Error::invalid("reports mix datasets, models or city sets"));
    }
    let mut seen: Vec<u32> = reports.iter().map(|r| r.horizon).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate horizon among reports"));
    }
    let mut wanted = horizons.to_vec();
    wanted.sort_unstable();
    if seen != wanted {
        return Err(Error::invalid(format!(
            "reports cover horizons {seen:?}, expected {wanted:?}"
        )));
    }
    let n = reports.len() as f64;
    Ok(first
        .cities
        .iter()
        .enumerate()
        .map(|(c, city)| {
            (
                city.clone(),
                reports.iter().map(|r| r.mae[c]).sum::<f64>() / n,
            )
        })
        .collect())
}

/// Median of a non-empty slice; the mean of the middle pair for even length.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}
