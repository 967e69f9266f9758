use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::table::WeatherTable;
use crate::error::{Error, Result};

/// Per-column min-max normalizer. Columns whose training range is a single
/// value are flagged constant and map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on `rows` of `table` only.
    pub fn fit(table: &WeatherTable, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > table.rows() {
            return Err(Error::invalid(format!(
                "scaler fit range {rows:?} is empty or outside {} rows",
                table.rows()
            )));
        }
        let cols = table.columns();
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for r in rows {
            for (c, &v) in table.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn columns(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, col: usize) -> bool {
        self.max[col] <= self.min[col]
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.columns())
            .filter(|&c| self.is_constant(c))
            .collect()
    }

    /// Values outside the training span land outside `[0, 1]`.
    pub fn transform(&self, col: usize, v: f64) -> f64 {
        if self.is_constant(col) {
            0.0
        } else {
            (v - self.min[col]) / (self.max[col] - self.min[col])
        }
    }

    pub fn inverse(&self, col: usize, u: f64) -> f64 {
        if self.is_constant(col) {
            self.min[col]
        } else {
            self.min[col] + u * (self.max[col] - self.min[col])
        }
    }

    /// Normalizes every cell of `table`.
    pub fn transform_table(&self, table: &WeatherTable) -> Result<Vec<f64>> {
        if table.columns() != self.columns() {
            return Err(Error::shape(format!(
                "scaler has {} columns, table has {}",
                self.columns(),
                table.columns()
            )));
        }
        let cols = self.columns();
        Ok(table
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.transform(i % cols, v))
            .collect())
    }
}
