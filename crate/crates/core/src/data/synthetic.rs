//! Deterministic synthetic weather for tests, benchmarks and demos.
//!
//! A shared weather front drifts across the cities: each city sees the same
//! smooth signal delayed by its position in the schema, so earlier cities
//! carry information about later ones and a spatial model can beat
//! persistence.

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::schema::Schema;
use crate::data::table::WeatherTable;
use crate::error::Result;

/// Hours of delay between consecutive cities.
const CITY_LAG: usize = 2;

/// A table of `rows` hourly-cadence rows starting at `start`.
pub fn synthetic_table(
    schema: &Schema,
    start: NaiveDateTime,
    rows: usize,
    seed: u64,
) -> Result<WeatherTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cities = schema.cities.len();
    let span = rows + CITY_LAG * cities;
    let mut front = Vec::with_capacity(span);
    let mut level = 0.0f64;
    for t in 0..span {
        level = 0.93 * level + 0.35 * (rng.random::<f64>() - 0.5);
        let tf = t as f64;
        front.push(
            level
                + 0.8 * (tf * std::f64::consts::TAU / 37.0).sin()
                + 0.5 * (tf * std::f64::consts::TAU / 11.0).cos(),
        );
    }
    let step = Duration::hours(i64::from(schema.cadence_hours));
    let timestamps: Vec<NaiveDateTime> = (0..rows).map(|r| start + step * r as i32).collect();
    let mut values = Vec::with_capacity(rows * schema.columns());
    for r in 0..rows {
        let hour = (r as f64) * f64::from(schema.cadence_hours);
        for c in 0..cities {
            // city c sees the front CITY_LAG * c hours after city 0
            let s = front[r + CITY_LAG * (cities - c)];
            for (f, name) in schema.features.iter().enumerate() {
                let noise = 0.05 * (rng.random::<f64>() - 0.5);
                let v = if *name == schema.wind_feature {
                    (6.0 + 2.5 * s + noise).max(0.0)
                } else {
                    let phase = (hour * std::f64::consts::TAU / 24.0 + f as f64).sin();
                    10.0 * (f as f64 + 1.0) + 3.0 * phase + 0.5 * s + noise
                };
                values.push(v);
            }
        }
    }
    WeatherTable::from_rows(schema.clone(), timestamps, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_timestamp;

    #[test]
    fn deterministic_and_complete() {
        let schema = Schema::denmark();
        let t0 = parse_timestamp("2000-01-01T00:00:00Z").unwrap();
        let a = synthetic_table(&schema, t0, 50, 3).unwrap();
        let b = synthetic_table(&schema, t0, 50, 3).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.rows(), 50);
        assert_eq!(a.columns(), 20);
        assert_ne!(
            a.values(),
            synthetic_table(&schema, t0, 50, 4).unwrap().values()
        );
    }

    #[test]
    fn later_cities_follow_earlier_ones() {
        let schema = Schema::denmark();
        let t0 = parse_timestamp("2000-01-01T00:00:00Z").unwrap();
        let table = synthetic_table(&schema, t0, 400, 1).unwrap();
        let w = schema.wind_index().unwrap();
        let col = |c: usize| -> Vec<f64> {
            (0..table.rows())
                .map(|r| table.value(r, c * schema.features.len() + w))
                .collect()
        };
        let (first, second) = (col(0), col(1));
        // second city at t matches first city at t - CITY_LAG up to noise
        let err: f64 = (CITY_LAG..400)
            .map(|r| (second[r] - first[r - CITY_LAG]).abs())
            .sum::<f64>()
            / 398.0;
        assert!(err < 0.1, "{err}");
    }
}
