//! Data pipeline properties: scaler round trip, window counts, leakage and
//! reproducible training.

use std::ops::Range;

use windcast::data::{MinMaxScaler, NormalizedTable, SplitPlan, WeatherTable, WindowSet};
use windcast::model::{save_weights, weights_checksum, ModelKind};
use windcast::repro::{run_unit, CriterionResult};

use crate::common::quick_config;

fn result(
    label: &str,
    expected: impl Into<String>,
    observed: String,
    passed: bool,
) -> CriterionResult {
    CriterionResult {
        criterion: 8,
        label: label.into(),
        expected: expected.into(),
        observed,
        passed,
    }
}

/// Every cell of the table, train or not, maps back through the scaler to
/// within two ulps of the column's magnitude.
pub fn scaler_round_trip(plan: &SplitPlan) -> CriterionResult {
    let table = plan.source.table();
    let scaler = plan.source.scaler();
    let mut worst = 0.0f64;
    for r in 0..table.rows() {
        for (c, &v) in table.row(r).iter().enumerate() {
            let back = scaler.inverse(c, scaler.transform(c, v));
            let scale = scaler.min[c].abs().max(scaler.max[c].abs()).max(v.abs());
            worst = worst.max((back - v).abs() / (f64::EPSILON * scale));
        }
    }
    result(
        "scaler round trip",
        "≤ 2 ulp of the column scale",
        format!("{worst:.2} ulp"),
        worst <= 2.0,
    )
}

/// `N − (T − 1) − Δ` samples for every `(N, T, Δ)` in a grid, and an empty
/// set error whenever that is below one.
pub fn window_count_grid(source: &std::sync::Arc<NormalizedTable>) -> CriterionResult {
    let rows = source.table().rows().min(48);
    let (mut checked, mut wrong) = (0, Vec::new());
    for n in 1..=rows {
        for t in 1..=8 {
            for d in 1..=12 {
                let expected = n as i64 - (t as i64 - 1) - d as i64;
                let got = match WindowSet::new(source.clone(), 0..n, t, d) {
                    Ok(w) => w.len() as i64,
                    Err(_) => 0,
                };
                checked += 1;
                if got != expected.max(0) {
                    wrong.push((n, t, d, got));
                }
            }
        }
    }
    result(
        "window count N−(T−1)−Δ",
        format!("{checked} grid points match"),
        format!(
            "{} mismatches {:?}",
            wrong.len(),
            wrong.iter().take(3).collect::<Vec<_>>()
        ),
        wrong.is_empty(),
    )
}

fn within(set: &WindowSet, rows: &Range<usize>) -> bool {
    (0..set.len()).all(|i| {
        let inputs = set.input_rows(i);
        let target = set.target_row(i);
        rows.start <= inputs.start && target < rows.end && inputs.end <= target
    })
}

/// Every window of every split stays inside its own rows, the splits are
/// ordered and disjoint, and the scaler depends on training rows only.
pub fn no_leakage(plan: &SplitPlan) -> CriterionResult {
    let mut problems = Vec::new();
    if !(plan.train_rows.end <= plan.validation_rows.start
        && plan.validation_rows.end <= plan.test_rows.start)
    {
        problems.push("split rows overlap or are out of order".to_string());
    }
    for &h in &plan.config.horizons {
        let s = plan.horizon(h).unwrap();
        for (name, set, rows) in [
            ("train", &s.train, &plan.train_rows),
            ("validation", &s.validation, &plan.validation_rows),
            ("test", &s.test, &plan.test_rows),
        ] {
            if !within(set, rows) {
                problems.push(format!("{name} window outside its rows at {h}h"));
            }
        }
    }
    let table = plan.source.table();
    if *plan.source.scaler() != MinMaxScaler::fit(table, plan.train_rows.clone()).unwrap() {
        problems.push("scaler differs from a training-rows fit".into());
    }
    // scaling every non-training row must not move the statistics
    let cols = table.columns();
    let mut values = table.values().to_vec();
    for r in (0..table.rows()).filter(|r| !plan.train_rows.contains(r)) {
        for v in &mut values[r * cols..(r + 1) * cols] {
            *v = *v * 10.0 + 100.0;
        }
    }
    let shifted =
        WeatherTable::from_rows(table.schema().clone(), table.timestamps().to_vec(), values)
            .unwrap();
    let replan = SplitPlan::new(shifted, plan.config.clone()).unwrap();
    if replan.source.scaler() != plan.source.scaler() {
        problems.push("scaler moved with non-training rows".into());
    }
    result(
        "no leakage across splits",
        "windows inside their split, train-only scaler",
        if problems.is_empty() {
            "none found".into()
        } else {
            problems.join("; ")
        },
        problems.is_empty(),
    )
}

/// Two trainings with one seed write identical weights; another seed does
/// not.
pub fn reproducible_training(plan: &SplitPlan) -> CriterionResult {
    let h = plan.config.horizons[0];
    let checksum = |seed| {
        let out = run_unit(
            plan,
            "synthetic",
            ModelKind::Multidim,
            h,
            &quick_config(seed, 3),
            |_| {},
        )
        .unwrap();
        weights_checksum(&save_weights(&out.model).unwrap()).unwrap()
    };
    let (a, b, other) = (checksum(42), checksum(42), checksum(43));
    result(
        "fixed-seed training is bit-reproducible",
        "equal checksums for seed 42, different for 43",
        format!("{a}, {b}, {other}"),
        a == b && a != other,
    )
}
