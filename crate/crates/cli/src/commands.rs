use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use windcast::data::{convert, load_csv, Schema, SplitPlan};
use windcast::metrics::{
    config_digest, emit_predictions, emit_report, evaluate_predictions, ExperimentReport,
    ReportFormat, ReportMeta,
};
use windcast::model::{
    load_weights, read_descriptor, save_weights, weights_checksum, Forecaster, Model, ModelKind,
    ModelSpec, Persistence,
};
use windcast::repro::{self, CriterionResult};
use windcast::train::fit_with;

use crate::config::{run_name, RunConfig};

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| {
        anyhow!(windcast::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| {
        anyhow!(windcast::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

pub fn cmd_convert(input: &Path, schema: &Schema, output: &Path) -> Result<()> {
    let bytes = fs::read(input).map_err(|source| {
        anyhow!(windcast::Error::Io {
            path: input.to_path_buf(),
            source,
        })
    })?;
    let conversion =
        convert(&bytes, schema).with_context(|| format!("converting {}", input.display()))?;
    write_file(output, &conversion.csv)?;
    let r = &conversion.report;
    println!(
        "{}: {} layout, {} rows ({} from source, {} gap rows), {} cells forward-filled, {} back-filled, hash {}",
        output.display(),
        conversion.layout,
        r.rows,
        r.source_rows,
        r.gap_rows,
        r.forward_filled,
        r.back_filled,
        r.content_hash
    );
    Ok(())
}

fn load_plan(config: &RunConfig) -> Result<SplitPlan> {
    let path = config.data_path()?;
    let table =
        load_csv(path, &config.schema).with_context(|| format!("loading {}", path.display()))?;
    let r = table.report();
    eprintln!(
        "loaded {}: {} rows, {} filled cells, hash {}",
        path.display(),
        r.rows,
        r.filled_cells(),
        r.content_hash
    );
    Ok(SplitPlan::new(table, config.split.clone())?)
}

/// Every (model, horizon, seed) combination, in a fixed order.
fn grid(config: &RunConfig) -> Vec<(ModelKind, u32, u64)> {
    let mut out = Vec::new();
    for kind in config.trainable_models() {
        for &h in &config.split.horizons {
            for &s in &config.seeds {
                out.push((kind, h, s));
            }
        }
    }
    out
}

/// Outcome of one trained run, as reported back to the serial caller.
struct Trained {
    name: String,
    model: Model,
    checksum: String,
}

fn train_one(
    plan: &SplitPlan,
    config: &RunConfig,
    kind: ModelKind,
    horizon: u32,
    seed: u64,
) -> Result<Trained> {
    let name = run_name(kind, config.code(), horizon, seed);
    let splits = plan.horizon(horizon)?;
    let spec = ModelSpec::new(
        kind,
        splits.train.input_shape(),
        splits.train.target_count(),
    )?;
    let mut model = Model::build(spec, seed)?;
    let train_config = config.train_config(kind, seed);
    let trace = fit_with(
        &mut model,
        &splits.train,
        &splits.validation,
        &train_config,
        |_| {},
    )
    .with_context(|| format!("run {name}"))?;
    let bytes = save_weights(&model)?;
    let checksum = weights_checksum(&bytes)?;
    write_file(&config.out.join(format!("{name}.wndc")), &bytes)?;
    write_file(
        &config.out.join(format!("{name}.trace.jsonl")),
        trace.to_json_lines().as_bytes(),
    )?;
    eprintln!(
        "{name}: {} epochs, best epoch {} (val loss {:.6}){}, {:.1}s, checksum {checksum}",
        trace.epochs_run(),
        trace.best_epoch,
        trace.best_val_loss,
        if trace.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        trace.wall_time_s
    );
    Ok(Trained {
        name,
        model,
        checksum,
    })
}

/// Runs the grid in parallel and returns results in grid order; the first
/// failure in that order is returned.
fn train_grid(plan: &SplitPlan, config: &RunConfig) -> Result<Vec<(ModelKind, u32, u64, Trained)>> {
    create_dir(&config.out)?;
    let runs = grid(config);
    let results: Vec<Result<Trained>> = runs
        .par_iter()
        .map(|&(kind, h, s)| train_one(plan, config, kind, h, s))
        .collect();
    runs.into_iter()
        .zip(results)
        .map(|((k, h, s), r)| r.map(|t| (k, h, s, t)))
        .collect()
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let plan = load_plan(config)?;
    if config.trainable_models().is_empty() {
        eprintln!("no trainable models requested; nothing to do");
        return Ok(());
    }
    for (_, _, _, t) in train_grid(&plan, config)? {
        println!(
            "{} {}",
            t.checksum,
            config.out.join(format!("{}.wndc", t.name)).display()
        );
    }
    Ok(())
}

fn meta(
    config: &RunConfig,
    kind: ModelKind,
    horizon: u32,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> ReportMeta {
    let digest = match seed {
        Some(s) => config_digest(&(config.train_config(kind, s), &config.split, kind)),
        None => config_digest(&config.split),
    };
    ReportMeta {
        dataset: config.dataset.clone(),
        horizon,
        seed,
        epochs,
        config_digest: digest,
    }
}

fn persistence_reports(
    plan: &SplitPlan,
    config: &RunConfig,
    dump: Option<&Path>,
) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    for &h in &config.split.horizons {
        let test = plan.horizon(h)?.test;
        let model = Persistence::for_set(&test)?;
        let predictions = model.predict_set(&test)?;
        if let Some(dir) = dump {
            let name = format!("persistence_{}_h{h}", config.code());
            write_file(
                &dir.join(format!("{name}.csv")),
                emit_predictions(&test, &predictions, h)?.as_bytes(),
            )?;
        }
        out.push(evaluate_predictions(
            &model,
            &test,
            &predictions,
            &meta(config, ModelKind::Persistence, h, None, None),
        )?);
    }
    Ok(out)
}

fn trained_report(
    plan: &SplitPlan,
    config: &RunConfig,
    model: &Model,
    name: &str,
    horizon: u32,
    seed: u64,
    dump: Option<&Path>,
) -> Result<ExperimentReport> {
    let test = plan.horizon(horizon)?.test;
    model
        .check_set(&test)
        .with_context(|| format!("weights {name}"))?;
    let predictions = model.predict_set(&test)?;
    if let Some(dir) = dump {
        write_file(
            &dir.join(format!("{name}.csv")),
            emit_predictions(&test, &predictions, horizon)?.as_bytes(),
        )?;
    }
    let kind = model.spec().kind;
    Ok(evaluate_predictions(
        model,
        &test,
        &predictions,
        &meta(config, kind, horizon, Some(seed), None),
    )?)
}

/// Reads the epoch count back from a run's trace, when one is present.
fn trace_epochs(dir: &Path, name: &str) -> Option<usize> {
    let text = fs::read_to_string(dir.join(format!("{name}.trace.jsonl"))).ok()?;
    windcast::train::TrainingTrace::from_json_lines(&text)
        .ok()
        .map(|e| e.len())
}

fn load_run(weights: &Path, name: &str, kind: ModelKind) -> Result<Model> {
    let path = weights.join(format!("{name}.wndc"));
    let bytes = fs::read(&path).map_err(|source| {
        anyhow!(windcast::Error::Io {
            path: path.clone(),
            source
        })
    })?;
    let descriptor =
        read_descriptor(&bytes).with_context(|| format!("reading {}", path.display()))?;
    if descriptor.kind != kind {
        return Err(anyhow!(windcast::Error::Config(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            descriptor.kind
        ))));
    }
    let mut model = Model::build(descriptor.spec()?, 0)?;
    load_weights(&mut model, &bytes).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

pub struct EvaluateOptions {
    pub weights: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub dump_predictions: bool,
}

fn write_reports(out: &Path, reports: &[ExperimentReport], formats: &[ReportFormat]) -> Result<()> {
    for &f in formats {
        let text = emit_report(reports, f)?;
        write_file(
            &out.join(format!("report.{}", f.extension())),
            text.as_bytes(),
        )?;
    }
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig, options: &EvaluateOptions) -> Result<()> {
    let plan = load_plan(config)?;
    create_dir(&config.out)?;
    let dump_dir = config.out.join("predictions");
    let dump = if options.dump_predictions {
        create_dir(&dump_dir)?;
        Some(dump_dir.as_path())
    } else {
        None
    };
    let mut reports = persistence_reports(&plan, config, dump)?;
    let runs = grid(config);
    let results: Vec<Result<ExperimentReport>> = runs
        .par_iter()
        .map(|&(kind, h, s)| {
            let name = run_name(kind, config.code(), h, s);
            let model = load_run(&options.weights, &name, kind)?;
            let mut report = trained_report(&plan, config, &model, &name, h, s, dump)?;
            report.epochs = trace_epochs(&options.weights, &name);
            Ok(report)
        })
        .collect();
    for r in results {
        reports.push(r?);
    }
    write_reports(&config.out, &reports, &options.formats)?;
    print!("{}", emit_report(&reports, options.formats[0])?);
    Ok(())
}

/// Trains the grid, evaluates it and checks the acceptance criteria that
/// apply to the dataset. Returns whether every criterion passed.
pub fn cmd_repro(config: &RunConfig, formats: &[ReportFormat]) -> Result<bool> {
    let target = repro::persistence_target(&config.dataset).ok_or_else(|| {
        anyhow!(windcast::Error::Config(format!(
            "no published results for dataset `{}`",
            config.dataset
        )))
    })?;
    let plan = load_plan(config)?;
    let mut reports = persistence_reports(&plan, config, None)?;
    for (kind, h, s, t) in train_grid(&plan, config)? {
        let mut report = trained_report(&plan, config, &t.model, &t.name, h, s, None)?;
        report.epochs = trace_epochs(&config.out, &t.name);
        debug_assert_eq!(report.model, kind);
        reports.push(report);
    }
    write_reports(&config.out, &reports, formats)?;
    print!("{}", emit_report(&reports, ReportFormat::Markdown)?);

    let horizons = &config.split.horizons;
    let mut results: Vec<CriterionResult> = repro::check_persistence(target, &reports);
    if config.models.contains(&ModelKind::Multidim) {
        results.extend(repro::check_multidim(&config.dataset, horizons, &reports));
    }
    if ModelKind::TRAINABLE
        .iter()
        .all(|k| config.models.contains(k))
    {
        results.extend(repro::check_comparative(
            &config.dataset,
            horizons,
            &reports,
        ));
    }
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    Ok(failed == 0)
}
