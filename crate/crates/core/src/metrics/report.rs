use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::{format_timestamp, WindowSet};
use crate::error::{Error, Result};
use crate::metrics::{median, ExperimentReport};
use crate::model::ModelKind;
use crate::tensor::Tensor;

pub const CSV_HEADER: &str = "model,dataset,horizon,city,mae,mse,params,seed,epochs";

/// City column value of the per-report average row in CSV output.
const AVERAGE_ROW: &str = "average";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid(format!(
                "unknown report format `{other}` (expected json, csv or markdown)"
            ))),
        }
    }
}

pub fn emit_report(reports: &[ExperimentReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    Ok(match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(reports).expect("reports serialize") + "\n"
        }
        ReportFormat::Csv => to_csv(reports),
        ReportFormat::Markdown => to_markdown(reports),
    })
}

pub fn reports_from_json(text: &str) -> Result<Vec<ExperimentReport>> {
    serde_json::from_str(text).map_err(|e| Error::format(format!("report JSON: {e}")))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn to_csv(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        let rows = r
            .cities
            .iter()
            .zip(r.mae.iter().zip(&r.mse))
            .map(|(c, (a, s))| (c.as_str(), *a, *s))
            .chain([(AVERAGE_ROW, r.avg_mae, r.avg_mse)]);
        for (city, m, s) in rows {
            let _ = writeln!(
                out,
                "{},{},{},{city},{m},{s},{},{},{}",
                r.model,
                r.dataset,
                r.horizon,
                r.params,
                opt(r.seed),
                opt(r.epochs)
            );
        }
    }
    out
}

/// Rebuilds reports from CSV output. Only the CSV columns survive; other
/// fields take their defaults.
pub fn reports_from_csv(text: &str) -> Result<Vec<ExperimentReport>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::format(format!(
            "unexpected report CSV header `{}`",
            header.join(",")
        )));
    }
    let mut out: Vec<ExperimentReport> = Vec::new();
    let mut open = false;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(e.to_string()))?;
        let bad = |what: &str| Error::format(format!("report CSV row {}: bad {what}", i + 2));
        let num = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| bad(what));
        let model: ModelKind = rec[0].parse().map_err(|_| bad("model"))?;
        let horizon: u32 = rec[2].parse().map_err(|_| bad("horizon"))?;
        let params: usize = rec[6].parse().map_err(|_| bad("params"))?;
        let seed = if rec[7].is_empty() {
            None
        } else {
            Some(rec[7].parse().map_err(|_| bad("seed"))?)
        };
        let epochs = if rec[8].is_empty() {
            None
        } else {
            Some(rec[8].parse().map_err(|_| bad("epochs"))?)
        };
        if !open {
            out.push(ExperimentReport {
                dataset: rec[1].to_string(),
                model,
                horizon,
                cities: Vec::new(),
                mae: Vec::new(),
                mse: Vec::new(),
                avg_mae: 0.0,
                avg_mse: 0.0,
                params,
                seed,
                epochs,
                samples: 0,
                filled_cells: 0,
                data_hash: String::new(),
                config_digest: String::new(),
            });
            open = true;
        }
        let r = out.last_mut().expect("just pushed");
        if r.model != model || r.dataset != rec[1] || r.horizon != horizon {
            return Err(bad("grouping (missing average row)"));
        }
        if &rec[3] == AVERAGE_ROW {
            r.avg_mae = num(4, "mae")?;
            r.avg_mse = num(5, "mse")?;
            open = false;
        } else {
            r.cities.push(rec[3].to_string());
            r.mae.push(num(4, "mae")?);
            r.mse.push(num(5, "mse")?);
        }
    }
    if open {
        return Err(Error::format("report CSV ends without an average row"));
    }
    Ok(out)
}

fn display_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Persistence => "Persistence",
        ModelKind::Conv2d => "2D",
        ModelKind::Conv2dAttention => "2D+Attention",
        ModelKind::Conv2dUpscaling => "2D+Upscaling",
        ModelKind::Conv3d => "3D",
        ModelKind::Multidim => "Multidimensional",
    }
}

fn row_order(kind: ModelKind) -> usize {
    [
        ModelKind::Persistence,
        ModelKind::Conv2d,
        ModelKind::Conv2dAttention,
        ModelKind::Conv2dUpscaling,
        ModelKind::Conv3d,
        ModelKind::Multidim,
    ]
    .iter()
    .position(|k| *k == kind)
    .expect("every kind listed")
}

pub(crate) fn decimals(dataset: &str) -> usize {
    if dataset == "netherlands" {
        2
    } else {
        3
    }
}

/// Models × horizons × {MAE, MSE} per dataset. Cells hold the median over
/// seeds of the city-averaged error; the column minimum is bold.
fn to_markdown(reports: &[ExperimentReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut out = String::new();
    for ds in datasets {
        let rs: Vec<&ExperimentReport> = reports.iter().filter(|r| r.dataset == ds).collect();
        let mut horizons: Vec<u32> = rs.iter().map(|r| r.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let mut models: Vec<ModelKind> = rs.iter().map(|r| r.model).collect();
        models.sort_by_key(|&m| row_order(m));
        models.dedup();

        // cell[(model, column)], columns: MAE per horizon then MSE per horizon
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut seeds: BTreeMap<usize, usize> = BTreeMap::new();
        for (mi, &m) in models.iter().enumerate() {
            for (hi, &h) in horizons.iter().enumerate() {
                let runs: Vec<&&ExperimentReport> = rs
                    .iter()
                    .filter(|r| r.model == m && r.horizon == h)
                    .collect();
                if runs.is_empty() {
                    continue;
                }
                seeds.insert(mi, runs.len());
                let maes: Vec<f64> = runs.iter().map(|r| r.avg_mae).collect();
                let mses: Vec<f64> = runs.iter().map(|r| r.avg_mse).collect();
                cells.insert((mi, hi), median(&maes).expect("non-empty"));
                cells.insert((mi, horizons.len() + hi), median(&mses).expect("non-empty"));
            }
        }
        let columns = 2 * horizons.len();
        let best: Vec<Option<f64>> = (0..columns)
            .map(|c| {
                cells
                    .iter()
                    .filter(|((_, cc), _)| *cc == c)
                    .map(|(_, v)| *v)
                    .min_by(f64::total_cmp)
            })
            .collect();

        let prec = decimals(ds);
        let _ = writeln!(out, "### {ds}\n");
        out.push_str("| Model |");
        for metric in ["MAE", "MSE"] {
            for h in &horizons {
                let _ = write!(out, " {metric} {h}h |");
            }
        }
        out.push_str(" Params | Runs |\n|---|");
        out.push_str(&"---:|".repeat(columns + 2));
        out.push('\n');
        for (mi, &m) in models.iter().enumerate() {
            let _ = write!(out, "| {} |", display_name(m));
            for (c, b) in best.iter().enumerate() {
                match cells.get(&(mi, c)) {
                    Some(v) if Some(*v) == *b => {
                        let _ = write!(out, " **{v:.prec$}** |");
                    }
                    Some(v) => {
                        let _ = write!(out, " {v:.prec$} |");
                    }
                    None => out.push_str(" - |"),
                }
            }
            let params = rs.iter().find(|r| r.model == m).map_or(0, |r| r.params);
            let _ = writeln!(
                out,
                " {params} | {} |",
                seeds.get(&mi).copied().unwrap_or(0)
            );
        }
        out.push('\n');

        let published: Vec<(ModelKind, usize, usize)> = models
            .iter()
            .filter_map(|&m| {
                let (dk, nl) = m.published_parameters()?;
                let theirs = match ds {
                    "denmark" => dk,
                    "netherlands" => nl,
                    _ => return None,
                };
                let ours = rs.iter().find(|r| r.model == m)?.params;
                Some((m, ours, theirs))
            })
            .collect();
        if !published.is_empty() {
            out.push_str(
                "| Model | Parameters (ours) | Parameters (published) |\n|---|---:|---:|\n",
            );
            for (m, ours, theirs) in published {
                let _ = writeln!(out, "| {} | {ours} | {theirs} |", display_name(m));
            }
            out.push('\n');
        }
    }
    out
}

/// `timestamp,city,horizon,y,y_hat` rows, timestamped at the target time.
pub fn emit_predictions(set: &WindowSet, predictions: &Tensor, horizon: u32) -> Result<String> {
    let k = set.target_count();
    if predictions.shape() != [set.len(), k] {
        return Err(Error::shape(format!(
            "predictions {:?} for {} samples of {k} targets",
            predictions.shape(),
            set.len()
        )));
    }
    let cities = &set.source().table().schema().targets;
    let mut out = String::from("timestamp,city,horizon,y,y_hat\n");
    for i in 0..set.len() {
        let ts = format_timestamp(&set.target_time(i));
        let y = set.target(i);
        for c in 0..k {
            let _ = writeln!(
                out,
                "{ts},{},{horizon},{},{}",
                cities[c],
                y[c],
                predictions.data()[i * k + c]
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ReportMeta;

    fn report(model: ModelKind, horizon: u32, mae: f64) -> ExperimentReport {
        let meta = ReportMeta {
            dataset: "denmark".into(),
            horizon,
            seed: Some(1),
            epochs: Some(12),
            config_digest: "abc".into(),
        };
        ExperimentReport::from_city_errors(
            &meta,
            model,
            42,
            vec!["esbjerg".into(), "odense".into()],
            vec![mae, mae / 3.0],
            vec![mae * mae, 0.1 + mae],
        )
    }

    #[test]
    fn markdown_shape_and_best_marking() {
        let rs: Vec<_> = [6, 12, 18, 24]
            .into_iter()
            .flat_map(|h| {
                [
                    report(ModelKind::Persistence, h, 2.0 + h as f64 / 10.0),
                    report(ModelKind::Multidim, h, 1.0 + h as f64 / 10.0),
                ]
            })
            .collect();
        let md = emit_report(&rs, ReportFormat::Markdown).unwrap();
        let header = md.lines().find(|l| l.starts_with("| Model | MAE")).unwrap();
        assert_eq!(header.matches("MAE").count(), 4);
        assert_eq!(header.matches("MSE").count(), 4);
        let multidim = md
            .lines()
            .find(|l| l.starts_with("| Multidimensional | **"))
            .unwrap();
        assert_eq!(multidim.matches("**").count(), 16);
        let persistence = md.lines().find(|l| l.starts_with("| Persistence")).unwrap();
        assert!(!persistence.contains("**"));
        assert!(md.contains("| Multidimensional | 42 | 37258 |"));
    }

    #[test]
    fn csv_round_trip() {
        let rs = vec![
            report(ModelKind::Conv3d, 6, 1.2345678901234567),
            report(ModelKind::Conv2d, 12, 0.1),
        ];
        let csv = emit_report(&rs, ReportFormat::Csv).unwrap();
        assert!(csv.starts_with(CSV_HEADER));
        let back = reports_from_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rs.iter().zip(&back) {
            assert_eq!(a.mae, b.mae);
            assert_eq!(a.mse, b.mse);
            assert_eq!(a.avg_mae, b.avg_mae);
            assert_eq!((a.seed, a.epochs, a.params), (b.seed, b.epochs, b.params));
        }
        let json = emit_report(&rs, ReportFormat::Json).unwrap();
        assert_eq!(reports_from_json(&json).unwrap(), rs);
    }

    #[test]
    fn unknown_format_rejected() {
        assert!(matches!(
            "xml".parse::<ReportFormat>(),
            Err(Error::InvalidArgument(_))
        ));
        assert!(emit_report(&[], ReportFormat::Json).is_err());
    }
}
