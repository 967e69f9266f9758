//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod grad;
pub mod oracles;
pub mod params;
pub mod pipeline;

use chrono::Duration;
use windcast::data::{
    parse_timestamp, synthetic_table, DateRange, Schema, SplitConfig, SplitPlan, Validation,
};
use windcast::train::TrainConfig;

/// A synthetic table for `schema` split by days: `train` days, then
/// `validation` days, then `test` days, starting 2000-01-01.
pub fn synthetic_plan(
    schema: &Schema,
    days: [i64; 3],
    horizons: &[u32],
    steps: usize,
    seed: u64,
) -> SplitPlan {
    let t0 = parse_timestamp("2000-01-01T00:00:00Z").unwrap();
    let total: i64 = days.iter().sum();
    let table = synthetic_table(schema, t0, (24 * total) as usize, seed).unwrap();
    let at = |d: i64| t0 + Duration::days(d);
    let config = SplitConfig {
        train: DateRange::new(at(0), at(days[0])),
        validation: Validation::Range(DateRange::new(at(days[0]), at(days[0] + days[1]))),
        test: DateRange::new(at(days[0] + days[1]), at(total)),
        horizons: horizons.to_vec(),
        steps,
    };
    SplitPlan::new(table, config).unwrap()
}

pub fn quick_config(seed: u64, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        patience: (max_epochs / 3).max(1),
        seed,
    }
}
