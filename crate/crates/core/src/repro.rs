//! Reproduction targets and the checks that compare runs against them.

use std::fmt;

use crate::data::SplitPlan;
use crate::error::Result;
use crate::metrics::{config_digest, evaluate, median, ExperimentReport, ReportMeta};
use crate::model::{Model, ModelKind, ModelSpec, Persistence};
use crate::train::{fit_with, EpochRecord, TrainConfig, TrainingTrace};

/// Published persistence errors for one dataset.
#[derive(Clone, Copy, Debug)]
pub struct PersistenceTarget {
    pub dataset: &'static str,
    pub horizons: [u32; 4],
    pub mae: [f64; 4],
    pub mse: [f64; 4],
    pub relative_tolerance: f64,
}

pub const DENMARK_PERSISTENCE: PersistenceTarget = PersistenceTarget {
    dataset: "denmark",
    horizons: [6, 12, 18, 24],
    mae: [1.649, 2.210, 2.309, 2.313],
    mse: [4.608, 7.929, 8.702, 8.812],
    relative_tolerance: 0.01,
};

pub const NETHERLANDS_PERSISTENCE: PersistenceTarget = PersistenceTarget {
    dataset: "netherlands",
    horizons: [1, 2, 3, 4],
    mae: [9.55, 11.34, 12.90, 14.37],
    mse: [183.61, 246.95, 310.38, 375.36],
    relative_tolerance: 0.015,
};

/// Upper bounds on the median multidim test MAE, `(horizon, bound)`.
pub const DENMARK_MULTIDIM_BOUNDS: [(u32, f64); 2] = [(6, 1.43), (24, 2.12)];
pub const NETHERLANDS_MULTIDIM_BOUNDS: [(u32, f64); 2] = [(2, 9.96), (3, 10.95)];

/// Seeds whose median is compared against the bounds.
pub const ACCEPTANCE_SEEDS: [u64; 3] = [1, 2, 3];

pub fn persistence_target(dataset: &str) -> Option<&'static PersistenceTarget> {
    match dataset {
        "denmark" => Some(&DENMARK_PERSISTENCE),
        "netherlands" => Some(&NETHERLANDS_PERSISTENCE),
        _ => None,
    }
}

pub fn multidim_bounds(dataset: &str) -> &'static [(u32, f64)] {
    match dataset {
        "denmark" => &DENMARK_MULTIDIM_BOUNDS,
        "netherlands" => &NETHERLANDS_MULTIDIM_BOUNDS,
        _ => &[],
    }
}

/// One checked criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub criterion: u32,
    pub label: String,
    pub expected: String,
    pub observed: String,
    pub passed: bool,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: expected {}, observed {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.label,
            self.expected,
            self.observed
        )
    }
}

fn relative_check(
    criterion: u32,
    label: String,
    expected: f64,
    observed: f64,
    tol: f64,
) -> CriterionResult {
    let delta = (observed - expected).abs();
    let rel = delta / expected.abs();
    CriterionResult {
        criterion,
        label,
        expected: format!("{expected} ± {:.1}%", tol * 100.0),
        observed: format!("{observed:.4}, |Δ| {delta:.4} ({:.2}%)", rel * 100.0),
        passed: rel <= tol,
    }
}

/// Persistence reports for every horizon of `plan`.
pub fn persistence_reports(plan: &SplitPlan, dataset: &str) -> Result<Vec<ExperimentReport>> {
    plan.config
        .horizons
        .iter()
        .map(|&h| {
            let splits = plan.horizon(h)?;
            let model = Persistence::for_set(&splits.test)?;
            let meta = ReportMeta {
                dataset: dataset.to_string(),
                horizon: h,
                config_digest: config_digest(&plan.config),
                ..Default::default()
            };
            evaluate(&model, &splits.test, &meta)
        })
        .collect()
}

/// Compares persistence reports against the published values.
pub fn check_persistence(
    target: &PersistenceTarget,
    reports: &[ExperimentReport],
) -> Vec<CriterionResult> {
    let criterion = if target.dataset == "denmark" { 1 } else { 2 };
    let mut out = Vec::new();
    for (i, &h) in target.horizons.iter().enumerate() {
        let Some(r) = reports
            .iter()
            .find(|r| r.model == ModelKind::Persistence && r.horizon == h)
        else {
            out.push(missing(
                criterion,
                format!("{} persistence {h}h", target.dataset),
            ));
            continue;
        };
        for (name, expected, observed) in [
            ("MAE", target.mae[i], r.avg_mae),
            ("MSE", target.mse[i], r.avg_mse),
        ] {
            out.push(relative_check(
                criterion,
                format!("{} persistence {h}h {name}", target.dataset),
                expected,
                observed,
                target.relative_tolerance,
            ));
        }
    }
    out
}

fn missing(criterion: u32, label: String) -> CriterionResult {
    CriterionResult {
        criterion,
        label,
        expected: "a report".into(),
        observed: "none".into(),
        passed: false,
    }
}

/// Median over seeds of the city-averaged MAE of `kind` at `horizon`.
pub fn median_mae(
    reports: &[ExperimentReport],
    dataset: &str,
    kind: ModelKind,
    horizon: u32,
) -> Option<f64> {
    let maes: Vec<f64> = reports
        .iter()
        .filter(|r| r.dataset == dataset && r.model == kind && r.horizon == horizon)
        .map(|r| r.avg_mae)
        .collect();
    median(&maes)
}

/// Multidim bounds plus "below persistence at every horizon" for one
/// dataset (criteria 3 and 4).
pub fn check_multidim(
    dataset: &str,
    horizons: &[u32],
    reports: &[ExperimentReport],
) -> Vec<CriterionResult> {
    let criterion = if dataset == "denmark" { 3 } else { 4 };
    let mut out = Vec::new();
    for &(h, bound) in multidim_bounds(dataset) {
        let label = format!("{dataset} multidim median MAE {h}h");
        out.push(match median_mae(reports, dataset, ModelKind::Multidim, h) {
            Some(m) => CriterionResult {
                criterion,
                label,
                expected: format!("≤ {bound}"),
                observed: format!("{m:.4}"),
                passed: m <= bound,
            },
            None => missing(criterion, label),
        });
    }
    out.extend(beats_persistence(
        criterion,
        dataset,
        ModelKind::Multidim,
        horizons,
        reports,
    ));
    out
}

fn beats_persistence(
    criterion: u32,
    dataset: &str,
    kind: ModelKind,
    horizons: &[u32],
    reports: &[ExperimentReport],
) -> Vec<CriterionResult> {
    horizons
        .iter()
        .map(|&h| {
            let label = format!("{dataset} {kind} below persistence {h}h");
            match (
                median_mae(reports, dataset, kind, h),
                median_mae(reports, dataset, ModelKind::Persistence, h),
            ) {
                (Some(m), Some(p)) => CriterionResult {
                    criterion,
                    label,
                    expected: format!("< {p:.4}"),
                    observed: format!("{m:.4}"),
                    passed: m < p,
                },
                _ => missing(criterion, label),
            }
        })
        .collect()
}

/// Every trainable model below persistence at every horizon (criterion 5).
pub fn check_comparative(
    dataset: &str,
    horizons: &[u32],
    reports: &[ExperimentReport],
) -> Vec<CriterionResult> {
    ModelKind::TRAINABLE
        .iter()
        .flat_map(|&k| beats_persistence(5, dataset, k, horizons, reports))
        .collect()
}

/// Result of one (model, horizon, seed) training run.
pub struct RunOutcome {
    pub model: Model,
    pub trace: TrainingTrace,
    pub report: ExperimentReport,
}

/// Builds, trains and evaluates one model on one horizon of `plan`.
pub fn run_unit<F>(
    plan: &SplitPlan,
    dataset: &str,
    kind: ModelKind,
    horizon: u32,
    config: &TrainConfig,
    on_epoch: F,
) -> Result<RunOutcome>
where
    F: FnMut(&EpochRecord),
{
    let splits = plan.horizon(horizon)?;
    let spec = ModelSpec::new(
        kind,
        splits.train.input_shape(),
        splits.train.target_count(),
    )?;
    let mut model = Model::build(spec, config.seed)?;
    let trace = fit_with(
        &mut model,
        &splits.train,
        &splits.validation,
        config,
        on_epoch,
    )?;
    let meta = ReportMeta {
        dataset: dataset.to_string(),
        horizon,
        seed: Some(config.seed),
        epochs: Some(trace.epochs_run()),
        config_digest: config_digest(&(config, &plan.config, kind)),
    };
    let report = evaluate(&model, &splits.test, &meta)?;
    Ok(RunOutcome {
        model,
        trace,
        report,
    })
}
