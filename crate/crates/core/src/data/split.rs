use std::ops::Range;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::data::scaler::MinMaxScaler;
use crate::data::table::{format_timestamp, WeatherTable};
use crate::data::window::{NormalizedTable, WindowSet};
use crate::error::{Error, Result};

/// Half-open `[start, end)` interval of timestamps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl DateRange {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Self {
        Self { start, end }
    }

    /// From the first day of `(y0, m0)` to the first day of `(y1, m1)`.
    pub fn months(y0: i32, m0: u32, y1: i32, m1: u32) -> Self {
        Self::new(month_start(y0, m0), month_start(y1, m1))
    }

    pub fn contains(&self, t: NaiveDateTime) -> bool {
        self.start <= t && t < self.end
    }
}

fn month_start(y: i32, m: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid calendar month")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Validation {
    Range(DateRange),
    /// The final fraction of training rows.
    TrainTail(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: DateRange,
    pub validation: Validation,
    pub test: DateRange,
    pub horizons: Vec<u32>,
    /// History length `T`.
    pub steps: usize,
}

impl SplitConfig {
    pub fn denmark() -> Self {
        Self {
            train: DateRange::months(2000, 1, 2009, 1),
            validation: Validation::Range(DateRange::months(2009, 1, 2010, 1)),
            test: DateRange::months(2010, 1, 2011, 1),
            horizons: vec![6, 12, 18, 24],
            steps: 4,
        }
    }

    pub fn netherlands() -> Self {
        Self {
            train: DateRange::months(2011, 1, 2019, 1),
            validation: Validation::TrainTail(0.1),
            test: DateRange::months(2019, 1, 2020, 4),
            horizons: vec![1, 2, 3, 4],
            steps: 6,
        }
    }

    pub fn for_dataset(id: &str) -> Result<Self> {
        match id {
            "denmark" => Ok(Self::denmark()),
            "netherlands" => Ok(Self::netherlands()),
            other => Err(Error::config(format!(
                "no default split for dataset `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ranges = vec![("train", self.train)];
        match self.validation {
            Validation::Range(r) => ranges.push(("validation", r)),
            Validation::TrainTail(f) if !(f > 0.0 && f < 1.0) => {
                return Err(Error::config(format!(
                    "validation fraction {f} must lie in (0, 1)"
                )))
            }
            Validation::TrainTail(_) => {}
        }
        ranges.push(("test", self.test));
        for (name, r) in &ranges {
            if r.start >= r.end {
                return Err(Error::config(format!("{name} range is empty or inverted")));
            }
        }
        for pair in ranges.windows(2) {
            let ((a, ra), (b, rb)) = (pair[0], pair[1]);
            if ra.end > rb.start {
                return Err(Error::config(format!(
                    "{a} range must end before {b} range starts"
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::config("window steps must be at least 1"));
        }
        if self.horizons.is_empty() {
            return Err(Error::config("no horizons configured"));
        }
        Ok(())
    }
}

/// Row ranges of the three splits over one normalized table. The scaler is
/// fit on the training rows, validation rows excluded.
#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub source: Arc<NormalizedTable>,
    pub train_rows: Range<usize>,
    pub validation_rows: Range<usize>,
    pub test_rows: Range<usize>,
    pub config: SplitConfig,
}

/// Window sets for one horizon.
#[derive(Clone, Debug)]
pub struct HorizonSplits {
    pub horizon_hours: u32,
    pub train: WindowSet,
    pub validation: WindowSet,
    pub test: WindowSet,
}

impl SplitPlan {
    pub fn new(table: WeatherTable, config: SplitConfig) -> Result<Self> {
        config.validate()?;
        let rows_of = |name: &str, r: DateRange| {
            let rows = table.row_range(r.start, r.end);
            if rows.is_empty() {
                Err(Error::config(format!(
                    "{name} range {}..{} has no rows in the table",
                    format_timestamp(&r.start),
                    format_timestamp(&r.end)
                )))
            } else {
                Ok(rows)
            }
        };
        let train_all = rows_of("train", config.train)?;
        let (train_rows, validation_rows) = match config.validation {
            Validation::Range(r) => (train_all, rows_of("validation", r)?),
            Validation::TrainTail(f) => {
                let n = train_all.len();
                if n < 2 {
                    return Err(Error::config(
                        "training range too short to carve a validation tail",
                    ));
                }
                let v = ((n as f64 * f).round() as usize).clamp(1, n - 1);
                let cut = train_all.end - v;
                (train_all.start..cut, cut..train_all.end)
            }
        };
        let test_rows = rows_of("test", config.test)?;
        let scaler = MinMaxScaler::fit(&table, train_rows.clone())?;
        let source = NormalizedTable::new(table, scaler)?;
        Ok(Self {
            source,
            train_rows,
            validation_rows,
            test_rows,
            config,
        })
    }

    pub fn horizon(&self, hours: u32) -> Result<HorizonSplits> {
        let schema = self.source.table().schema();
        let h = schema.horizon_steps(hours)?;
        let t = self.config.steps;
        let make = |rows: &Range<usize>| WindowSet::new(self.source.clone(), rows.clone(), t, h);
        Ok(HorizonSplits {
            horizon_hours: hours,
            train: make(&self.train_rows)?,
            validation: make(&self.validation_rows)?,
            test: make(&self.test_rows)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_chronological() {
        SplitConfig::denmark().validate().unwrap();
        SplitConfig::netherlands().validate().unwrap();
    }

    #[test]
    fn overlap_and_inversion_rejected() {
        let mut c = SplitConfig::denmark();
        c.test = DateRange::months(2008, 6, 2011, 1);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = SplitConfig::denmark();
        c.train = DateRange::months(2009, 1, 2000, 1);
        assert!(c.validate().is_err());
        let mut c = SplitConfig::netherlands();
        c.validation = Validation::TrainTail(1.5);
        assert!(c.validate().is_err());
    }
}
