use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDateTime;
use sha2::{Digest, Sha256};

use crate::data::scaler::MinMaxScaler;
use crate::data::table::{hex, WeatherTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A table together with its normalized copy, shared by every window set
/// cut from it.
#[derive(Debug)]
pub struct NormalizedTable {
    table: WeatherTable,
    scaler: MinMaxScaler,
    normalized: Vec<f64>,
}

impl NormalizedTable {
    pub fn new(table: WeatherTable, scaler: MinMaxScaler) -> Result<Arc<Self>> {
        let normalized = scaler.transform_table(&table)?;
        Ok(Arc::new(Self {
            table,
            scaler,
            normalized,
        }))
    }

    pub fn table(&self) -> &WeatherTable {
        &self.table
    }

    pub fn scaler(&self) -> &MinMaxScaler {
        &self.scaler
    }

    pub fn normalized_row(&self, r: usize) -> &[f64] {
        let c = self.table.columns();
        &self.normalized[r * c..(r + 1) * c]
    }
}

/// One example: normalized `(C, T, F)` history ending at `anchor`, raw
/// target wind speeds at `anchor + horizon`, and the raw wind speeds of the
/// target cities at `anchor`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub input: Tensor,
    pub target: Vec<f64>,
    pub anchor: NaiveDateTime,
    pub last_wind: Vec<f64>,
}

/// All windows of one contiguous row range at one horizon.
#[derive(Clone, Debug)]
pub struct WindowSet {
    source: Arc<NormalizedTable>,
    rows: Range<usize>,
    steps: usize,
    horizon_steps: usize,
    target_cols: Vec<usize>,
}

impl WindowSet {
    /// Every anchor `t` in `rows` with `t - steps + 1` and `t + horizon_steps`
    /// also in `rows`: `N - (steps - 1) - horizon_steps` samples.
    pub fn new(
        source: Arc<NormalizedTable>,
        rows: Range<usize>,
        steps: usize,
        horizon_steps: usize,
    ) -> Result<Self> {
        if steps == 0 || horizon_steps == 0 {
            return Err(Error::invalid(
                "window steps and horizon must be at least 1",
            ));
        }
        if rows.end > source.table.rows() {
            return Err(Error::invalid(format!(
                "rows {rows:?} exceed the table's {} rows",
                source.table.rows()
            )));
        }
        if rows.len() < steps + horizon_steps {
            return Err(Error::EmptySet(format!(
                "{} rows cannot hold a {steps}-step window with a {horizon_steps}-step horizon",
                rows.len()
            )));
        }
        let schema = source.table.schema();
        let f = schema.features.len();
        let wind = schema.wind_index()?;
        let target_cols = schema
            .target_indices()?
            .into_iter()
            .map(|c| c * f + wind)
            .collect();
        Ok(Self {
            source,
            rows,
            steps,
            horizon_steps,
            target_cols,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len() + 1 - self.steps - self.horizon_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    pub fn source(&self) -> &Arc<NormalizedTable> {
        &self.source
    }

    pub fn target_count(&self) -> usize {
        self.target_cols.len()
    }

    /// `(C, T, F)`.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.source.table.schema();
        [s.cities.len(), self.steps, s.features.len()]
    }

    /// Table row of the newest input step of sample `i`.
    pub fn anchor_row(&self, i: usize) -> usize {
        assert!(i < self.len(), "sample {i} out of {}", self.len());
        self.rows.start + self.steps - 1 + i
    }

    pub fn input_rows(&self, i: usize) -> Range<usize> {
        let a = self.anchor_row(i);
        a + 1 - self.steps..a + 1
    }

    pub fn target_row(&self, i: usize) -> usize {
        self.anchor_row(i) + self.horizon_steps
    }

    pub fn anchor_time(&self, i: usize) -> NaiveDateTime {
        self.source.table.timestamps()[self.anchor_row(i)]
    }

    pub fn target_time(&self, i: usize) -> NaiveDateTime {
        self.source.table.timestamps()[self.target_row(i)]
    }

    fn write_input(&self, i: usize, out: &mut [f64]) {
        let [c_n, t_n, f_n] = self.input_shape();
        for (t, r) in self.input_rows(i).enumerate() {
            let row = self.source.normalized_row(r);
            for c in 0..c_n {
                let dst = (c * t_n + t) * f_n;
                out[dst..dst + f_n].copy_from_slice(&row[c * f_n..(c + 1) * f_n]);
            }
        }
    }

    pub fn input(&self, i: usize) -> Tensor {
        let shape = self.input_shape();
        let mut data = vec![0.0; shape.iter().product()];
        self.write_input(i, &mut data);
        Tensor::new(shape.to_vec(), data).expect("window shape is positive")
    }

    pub fn target(&self, i: usize) -> Vec<f64> {
        let row = self.source.table.row(self.target_row(i));
        self.target_cols.iter().map(|&c| row[c]).collect()
    }

    pub fn last_wind(&self, i: usize) -> Vec<f64> {
        let row = self.source.table.row(self.anchor_row(i));
        self.target_cols.iter().map(|&c| row[c]).collect()
    }

    pub fn sample(&self, i: usize) -> SampleWindow {
        SampleWindow {
            input: self.input(i),
            target: self.target(i),
            anchor: self.anchor_time(i),
            last_wind: self.last_wind(i),
        }
    }

    /// Stacks the given samples into `(B, C, T, F)` inputs and `(B, targets)`
    /// raw targets.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let shape = self.input_shape();
        let per: usize = shape.iter().product();
        let mut x = vec![0.0; per * indices.len()];
        let mut y = Vec::with_capacity(indices.len() * self.target_count());
        for (b, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample {i} out of {}", self.len())));
            }
            self.write_input(i, &mut x[b * per..(b + 1) * per]);
            y.extend(self.target(i));
        }
        let mut xs = vec![indices.len()];
        xs.extend_from_slice(&shape);
        Ok((
            Tensor::new(xs, x)?,
            Tensor::new(vec![indices.len(), self.target_count()], y)?,
        ))
    }

    /// All raw targets as `(N, targets)`.
    pub fn targets(&self) -> Tensor {
        let data = (0..self.len()).flat_map(|i| self.target(i)).collect();
        Tensor::new(vec![self.len(), self.target_count()], data).expect("non-empty set")
    }

    /// SHA-256 over anchors, inputs and targets in little-endian bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for i in 0..self.len() {
            h.update(self.anchor_time(i).and_utc().timestamp().to_le_bytes());
            for v in self.input(i).data().iter().chain(&self.target(i)) {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

/// Indexable supervised samples: `(B, C, T, F)` inputs and `(B, targets)`
/// targets per batch.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)>;
}

impl SampleSource for WindowSet {
    fn len(&self) -> usize {
        WindowSet::len(self)
    }

    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        WindowSet::batch(self, indices)
    }
}

/// Samples held as two stacked tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSamples {
    inputs: Tensor,
    targets: Tensor,
}

impl TensorSamples {
    /// `inputs: (N, ...)`, `targets: (N, K)`.
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        if inputs.rank() < 2 || targets.rank() != 2 || inputs.shape()[0] != targets.shape()[0] {
            return Err(Error::shape(format!(
                "inputs {:?} and targets {:?} must share a leading sample axis",
                inputs.shape(),
                targets.shape()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }
}

fn gather(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let n = t.shape()[0];
    let per = t.numel() / n;
    let mut data = Vec::with_capacity(per * indices.len());
    for &i in indices {
        if i >= n {
            return Err(Error::invalid(format!("sample {i} out of {n}")));
        }
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}

impl SampleSource for TensorSamples {
    fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        Ok((
            gather(&self.inputs, indices)?,
            gather(&self.targets, indices)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::Schema;
    use chrono::{NaiveDate, TimeDelta};

    fn source(rows: usize) -> Arc<NormalizedTable> {
        let schema = Schema {
            id: "grid".into(),
            cities: vec!["a".into(), "b".into()],
            features: vec!["wind_speed".into(), "temperature".into(), "pressure".into()],
            wind_feature: "wind_speed".into(),
            targets: vec!["b".into()],
            cadence_hours: 1,
        };
        let start = NaiveDate::from_ymd_opt(2000, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let ts = (0..rows)
            .map(|i| start + TimeDelta::hours(i as i64))
            .collect();
        // cell value encodes (row, column)
        let values = (0..rows * 6).map(|i| (i / 6 * 10 + i % 6) as f64).collect();
        let table = WeatherTable::from_rows(schema, ts, values).unwrap();
        let scaler = MinMaxScaler::fit(&table, 0..rows).unwrap();
        NormalizedTable::new(table, scaler).unwrap()
    }

    #[test]
    fn count_formula() {
        let w = WindowSet::new(source(100), 0..100, 4, 6).unwrap();
        // anchors 3..=93
        assert_eq!(w.len(), 91);
        assert_eq!(w.len(), 100 - (4 - 1) - 6);
        let err = WindowSet::new(source(10), 0..10, 6, 6).unwrap_err();
        assert!(matches!(err, Error::EmptySet(_)));
    }

    #[test]
    fn first_sample_rows() {
        let w = WindowSet::new(source(30), 0..30, 4, 6).unwrap();
        assert_eq!(w.input_rows(0), 0..4);
        assert_eq!(w.target_row(0), 9);
        assert_eq!(w.target(0), vec![93.0]);
        assert_eq!(w.last_wind(0), vec![33.0]);
    }

    #[test]
    fn input_layout_is_city_time_feature() {
        let src = source(20);
        let w = WindowSet::new(src.clone(), 5..20, 3, 1).unwrap();
        let x = w.input(2);
        assert_eq!(x.shape(), &[2, 3, 3]);
        let scaler = src.scaler();
        for c in 0..2 {
            for t in 0..3 {
                for f in 0..3 {
                    let col = c * 3 + f;
                    let raw = src.table().value(7 + t, col);
                    assert_eq!(x.get(&[c, t, f]), scaler.transform(col, raw));
                }
            }
        }
    }

    #[test]
    fn batch_matches_samples() {
        let w = WindowSet::new(source(40), 0..40, 4, 2).unwrap();
        let (x, y) = w.batch(&[3, 0, 7]).unwrap();
        assert_eq!(x.shape(), &[3, 2, 4, 3]);
        assert_eq!(&x.data()[..24], w.input(3).data());
        assert_eq!(y.data(), &[w.target(3)[0], w.target(0)[0], w.target(7)[0]]);
        assert_eq!(
            w.digest(),
            WindowSet::new(source(40), 0..40, 4, 2).unwrap().digest()
        );
    }
}
