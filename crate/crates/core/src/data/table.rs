use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::schema::Schema;
use crate::error::{Error, Result};

/// Counts surfaced by ingestion for audit trails.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionReport {
    /// Data rows present in the file.
    pub source_rows: usize,
    /// Rows after gap insertion, one per timestamp.
    pub rows: usize,
    /// `rows * cities`.
    pub station_rows: usize,
    /// Timestamps absent from the file and inserted to restore the cadence.
    pub gap_rows: usize,
    pub forward_filled: usize,
    /// Leading missing cells filled from the first observation.
    pub back_filled: usize,
    /// SHA-256 over a git-style blob header plus the file bytes.
    pub content_hash: String,
}

impl IngestionReport {
    pub fn filled_cells(&self) -> usize {
        self.forward_filled + self.back_filled
    }
}

/// Hourly weather observations in raw units, one column per
/// `(city, feature)` pair in schema order, no missing values.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherTable {
    schema: Schema,
    timestamps: Vec<NaiveDateTime>,
    values: Vec<f64>,
    report: IngestionReport,
}

impl WeatherTable {
    /// Builds a table from complete, equally spaced rows.
    pub fn from_rows(
        schema: Schema,
        timestamps: Vec<NaiveDateTime>,
        values: Vec<f64>,
    ) -> Result<Self> {
        schema.validate()?;
        let cols = schema.columns();
        if timestamps.is_empty() {
            return Err(Error::EmptySet("table has no rows".into()));
        }
        if values.len() != timestamps.len() * cols {
            return Err(Error::shape(format!(
                "{} values for {} rows of {cols} columns",
                values.len(),
                timestamps.len()
            )));
        }
        let step = cadence(&schema);
        if let Some(i) = timestamps.windows(2).position(|w| w[1] - w[0] != step) {
            return Err(Error::invalid(format!(
                "timestamps {} and {} are not {}h apart",
                timestamps[i],
                timestamps[i + 1],
                schema.cadence_hours
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("table values must be finite"));
        }
        let report = IngestionReport {
            source_rows: timestamps.len(),
            rows: timestamps.len(),
            station_rows: timestamps.len() * schema.cities.len(),
            ..Default::default()
        };
        Ok(Self {
            schema,
            timestamps,
            values,
            report,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn report(&self) -> &IngestionReport {
        &self.report
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn columns(&self) -> usize {
        self.schema.columns()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.columns();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns() + col]
    }

    /// Rows whose timestamp lies in `[start, end)`.
    pub fn row_range(&self, start: NaiveDateTime, end: NaiveDateTime) -> Range<usize> {
        let lo = self.timestamps.partition_point(|t| *t < start);
        let hi = self.timestamps.partition_point(|t| *t < end).max(lo);
        lo..hi
    }

    /// Renders the canonical CSV layout. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp");
        for name in self.schema.column_names() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for (r, ts) in self.timestamps.iter().enumerate() {
            out.push_str(&format_timestamp(ts));
            for v in self.row(r) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn cadence(schema: &Schema) -> TimeDelta {
    TimeDelta::hours(i64::from(schema.cadence_hours))
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses ISO-8601 timestamps. Offsets are converted to UTC; a bare
/// timestamp is taken as UTC and a bare date as its midnight.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// SHA-256 of `bytes` behind a git-style `blob <len>\0` header.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || matches!(cell, "NA" | "NaN" | "nan" | "null")
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<WeatherTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, schema)
}

/// Parses a canonical CSV. Row numbers in errors are 1-based file lines,
/// the header being line 1.
pub fn parse_csv(bytes: &[u8], schema: &Schema) -> Result<WeatherTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut records = reader.records();
    let ingest = |row: usize, message: String| Error::Ingestion { row, message };

    let header = match records.next() {
        None => return Err(ingest(1, "empty file".into())),
        Some(r) => r.map_err(|e| ingest(1, e.to_string()))?,
    };
    let column_of = header_mapping(&header, schema)?;
    let cols = schema.columns();

    let mut parsed: Vec<(NaiveDateTime, usize, Vec<f64>)> = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            ingest(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(ingest(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| ingest(line, format!("unparsable timestamp `{}`", &record[0])))?;
        let mut row = vec![f64::NAN; cols];
        for (field, &col) in record.iter().skip(1).zip(&column_of) {
            if is_missing(field) {
                continue;
            }
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    ingest(
                        line,
                        format!(
                            "unparsable value `{field}` in column {}",
                            schema_name(schema, col)
                        ),
                    )
                })?;
            row[col] = v;
        }
        parsed.push((ts, line, row));
    }
    if parsed.is_empty() {
        return Err(ingest(2, "file has a header but no data rows".into()));
    }
    let source_rows = parsed.len();
    parsed.sort_by_key(|(ts, line, _)| (*ts, *line));

    let step = cadence(schema);
    let mut timestamps = Vec::with_capacity(parsed.len());
    let mut values = Vec::with_capacity(parsed.len() * cols);
    let mut gap_rows = 0;
    for (i, (ts, line, row)) in parsed.iter().enumerate() {
        if i > 0 {
            let (prev_ts, prev_line, _) = &parsed[i - 1];
            if ts == prev_ts {
                return Err(ingest(
                    *line.max(prev_line),
                    format!("duplicate timestamp {}", format_timestamp(ts)),
                ));
            }
            let gap = *ts - *prev_ts;
            if gap.num_seconds() % step.num_seconds() != 0 {
                return Err(ingest(
                    *line,
                    format!(
                        "timestamp {} is off the {}h cadence",
                        format_timestamp(ts),
                        schema.cadence_hours
                    ),
                ));
            }
            let mut t = *prev_ts + step;
            while t < *ts {
                timestamps.push(t);
                values.extend(std::iter::repeat_n(f64::NAN, cols));
                gap_rows += 1;
                t += step;
            }
        }
        timestamps.push(*ts);
        values.extend_from_slice(row);
    }

    let rows = timestamps.len();
    let (forward_filled, back_filled) = fill_missing(&mut values, rows, cols).map_err(|col| {
        ingest(
            2,
            format!("column {} has no observations", schema_name(schema, col)),
        )
    })?;

    let report = IngestionReport {
        source_rows,
        rows,
        station_rows: rows * schema.cities.len(),
        gap_rows,
        forward_filled,
        back_filled,
        content_hash: content_hash(bytes),
    };
    Ok(WeatherTable {
        schema: schema.clone(),
        timestamps,
        values,
        report,
    })
}

fn schema_name(schema: &Schema, col: usize) -> String {
    let f = schema.features.len();
    schema.column_name(col / f, col % f)
}

/// Maps each non-timestamp header field to its schema column.
fn header_mapping(header: &csv::StringRecord, schema: &Schema) -> Result<Vec<usize>> {
    let ingest = |message: String| Error::Ingestion { row: 1, message };
    if header.get(0) != Some("timestamp") {
        return Err(ingest(format!(
            "first column must be `timestamp`, found `{}`",
            header.get(0).unwrap_or("")
        )));
    }
    let index: HashMap<String, usize> = schema
        .column_names()
        .into_iter()
        .enumerate()
        .map(|(i, n)| (n, i))
        .collect();
    let mut seen = vec![false; schema.columns()];
    let mut mapping = Vec::with_capacity(header.len() - 1);
    for name in header.iter().skip(1) {
        let &col = index
            .get(name)
            .ok_or_else(|| ingest(format!("unknown column `{name}` for schema {}", schema.id)))?;
        if std::mem::replace(&mut seen[col], true) {
            return Err(ingest(format!("duplicate column `{name}`")));
        }
        mapping.push(col);
    }
    if let Some(col) = seen.iter().position(|s| !s) {
        return Err(ingest(format!(
            "missing column `{}`",
            schema_name(schema, col)
        )));
    }
    Ok(mapping)
}

/// Forward-fills each column, then back-fills a leading gap. Returns the
/// two fill counts, or the index of a column with no values at all.
fn fill_missing(
    values: &mut [f64],
    rows: usize,
    cols: usize,
) -> std::result::Result<(usize, usize), usize> {
    let (mut fwd, mut back) = (0, 0);
    for c in 0..cols {
        let first = (0..rows)
            .find(|&r| !values[r * cols + c].is_nan())
            .ok_or(c)?;
        let v0 = values[first * cols + c];
        for r in 0..first {
            values[r * cols + c] = v0;
            back += 1;
        }
        let mut last = v0;
        for r in first..rows {
            let cell = &mut values[r * cols + c];
            if cell.is_nan() {
                *cell = last;
                fwd += 1;
            } else {
                last = *cell;
            }
        }
    }
    Ok((fwd, back))
}
