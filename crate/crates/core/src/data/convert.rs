//! Conversion of upstream export layouts into the canonical CSV.
//!
//! Canonical layout: header `timestamp,<city>_<feature>,...`, ISO-8601 UTC
//! timestamps, `.` as decimal point, empty cells for missing values.
//!
//! KNMI hourly export (Netherlands): a `# STN,YYYYMMDD,HH,...` header after
//! free-text preamble, one row per station and hour. `HH` is the hour ending
//! the observation interval, so `HH = 24` is midnight of the next day.
//!
//! | station | city        |
//! |---------|-------------|
//! | 240     | schiphol    |
//! | 260     | de_bilt     |
//! | 270     | leeuwarden  |
//! | 280     | eelde       |
//! | 344     | rotterdam   |
//! | 370     | eindhoven   |
//! | 380     | maastricht  |
//!
//! | KNMI column | feature        | unit       |
//! |-------------|----------------|------------|
//! | FH          | wind_speed     | 0.1 m/s    |
//! | DD          | wind_direction | degrees    |
//! | T           | temperature    | 0.1 °C     |
//! | TD          | dew_point      | 0.1 °C     |
//! | P           | air_pressure   | 0.1 hPa    |
//! | RH          | rain_amount    | 0.1 mm     |
//!
//! Wide export (Denmark): one row per hour with a `timestamp`, `datetime`,
//! `date_time` or `date` column and one `<City> <feature>` column per
//! series. Names are matched case-insensitively with any run of spaces,
//! dashes or dots read as `_`; feature aliases such as `temp`, `ws` and `wd`
//! are accepted.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};

use crate::data::schema::Schema;
use crate::data::table::{format_timestamp, parse_csv, parse_timestamp, IngestionReport};
use crate::error::{Error, Result};

pub const KNMI_STATIONS: [(u32, &str); 7] = [
    (240, "schiphol"),
    (260, "de_bilt"),
    (270, "leeuwarden"),
    (280, "eelde"),
    (344, "rotterdam"),
    (370, "eindhoven"),
    (380, "maastricht"),
];

pub const KNMI_COLUMNS: [(&str, &str); 6] = [
    ("FH", "wind_speed"),
    ("DD", "wind_direction"),
    ("T", "temperature"),
    ("TD", "dew_point"),
    ("P", "air_pressure"),
    ("RH", "rain_amount"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Canonical,
    Knmi,
    Wide,
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Canonical => "canonical",
            Layout::Knmi => "knmi",
            Layout::Wide => "wide",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Conversion {
    pub layout: Layout,
    pub csv: Vec<u8>,
    /// Ingestion counts of the converted file.
    pub report: IngestionReport,
}

/// Detects the layout of `input` and converts it. A canonical file is
/// returned byte for byte.
pub fn convert(input: &[u8], schema: &Schema) -> Result<Conversion> {
    let text = std::str::from_utf8(input)
        .map_err(|e| Error::format(format!("input is not UTF-8: {e}")))?;
    let (layout, csv) = if is_canonical(text, schema) {
        (Layout::Canonical, input.to_vec())
    } else if let Some(header_line) = knmi_header_line(text) {
        (
            Layout::Knmi,
            convert_knmi(text, header_line, schema)?.into_bytes(),
        )
    } else {
        (Layout::Wide, convert_wide(text, schema)?.into_bytes())
    };
    let report = parse_csv(&csv, schema)?.report().clone();
    Ok(Conversion {
        layout,
        csv,
        report,
    })
}

fn is_canonical(text: &str, schema: &Schema) -> bool {
    let Some(header) = text.lines().next() else {
        return false;
    };
    let mut fields = header.trim_end_matches('\r').split(',');
    if fields.next() != Some("timestamp") {
        return false;
    }
    let names = schema.column_names();
    let got: Vec<&str> = fields.collect();
    got.len() == names.len() && got.iter().all(|g| names.iter().any(|n| n == g))
}

fn knmi_header_line(text: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start_matches('#').trim_start();
        l.starts_with("STN,") || l.starts_with("STN ,")
    })
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn new_grid(schema: &Schema) -> Vec<Option<f64>> {
    vec![None; schema.columns()]
}

fn render(schema: &Schema, rows: &BTreeMap<NaiveDateTime, Vec<Option<f64>>>) -> String {
    let mut out = String::from("timestamp");
    for n in schema.column_names() {
        out.push(',');
        out.push_str(&n);
    }
    out.push('\n');
    for (ts, vals) in rows {
        out.push_str(&format_timestamp(ts));
        for v in vals {
            out.push(',');
            if let Some(v) = v {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

fn convert_knmi(text: &str, header_line: usize, schema: &Schema) -> Result<String> {
    let lines: Vec<&str> = text.lines().collect();
    let header = split_fields(lines[header_line].trim_start_matches('#'));
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (stn, date, hour) = match (col("STN"), col("YYYYMMDD"), col("HH")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::format("KNMI header lacks STN, YYYYMMDD or HH")),
    };
    let f_n = schema.features.len();
    let mut sources = Vec::new();
    for (knmi, feature) in KNMI_COLUMNS {
        if let Some(fi) = schema.features.iter().position(|f| f == feature) {
            let ci = col(knmi)
                .ok_or_else(|| Error::format(format!("KNMI header lacks column {knmi}")))?;
            sources.push((ci, fi));
        }
    }
    if sources.len() != f_n {
        return Err(Error::format(format!(
            "schema {} has features with no KNMI column",
            schema.id
        )));
    }
    let city_of: HashMap<u32, usize> = KNMI_STATIONS
        .iter()
        .filter_map(|(code, city)| {
            schema
                .cities
                .iter()
                .position(|c| c == city)
                .map(|i| (*code, i))
        })
        .collect();

    let mut rows: BTreeMap<NaiveDateTime, Vec<Option<f64>>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines.iter().enumerate().skip(header_line + 1) {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let bad = |m: String| Error::format(format!("line {lineno}: {m}"));
        let fields = split_fields(trimmed);
        if fields.len() < header.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                header.len(),
                fields.len()
            )));
        }
        let code: u32 = fields[stn]
            .parse()
            .map_err(|_| bad(format!("bad station `{}`", fields[stn])))?;
        let &city = city_of
            .get(&code)
            .ok_or_else(|| Error::format(format!("line {lineno}: unknown station code {code}")))?;
        let day = NaiveDate::parse_from_str(fields[date], "%Y%m%d")
            .map_err(|_| bad(format!("bad date `{}`", fields[date])))?;
        let hh: i64 = fields[hour]
            .parse()
            .ok()
            .filter(|h| (1..=24).contains(h))
            .ok_or_else(|| bad(format!("bad hour `{}`", fields[hour])))?;
        let ts = day.and_hms_opt(0, 0, 0).expect("midnight exists") + TimeDelta::hours(hh);
        if !seen.insert((code, ts)) {
            return Err(bad(format!(
                "duplicate record for station {code} at {}",
                format_timestamp(&ts)
            )));
        }
        let grid = rows.entry(ts).or_insert_with(|| new_grid(schema));
        for &(ci, fi) in &sources {
            let cell = fields[ci];
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("bad value `{cell}` in {}", header[ci])))?;
            grid[city * f_n + fi] = Some(v);
        }
    }
    if rows.is_empty() {
        return Err(Error::format("KNMI export has no data rows"));
    }
    Ok(render(schema, &rows))
}

fn normalize_name(s: &str) -> String {
    let mut out = String::new();
    for ch in s.trim().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn feature_aliases(feature: &str) -> &'static [&'static str] {
    match feature {
        "temperature" => &["temp", "t", "air_temperature"],
        "pressure" => &["press", "p", "air_pressure", "pres"],
        "air_pressure" => &["pressure", "press", "p"],
        "wind_speed" => &["windspeed", "ws", "wspd", "speed", "wind"],
        "wind_direction" => &["winddirection", "wd", "wdir", "direction", "dir"],
        "dew_point" => &["dewpoint", "td", "dew"],
        "rain_amount" => &["rain", "precipitation", "rh"],
        _ => &[],
    }
}

fn match_column(name: &str, schema: &Schema) -> Option<usize> {
    let name = normalize_name(name);
    let f_n = schema.features.len();
    for (ci, city) in schema.cities.iter().enumerate() {
        let Some(rest) = name
            .strip_prefix(city.as_str())
            .and_then(|r| r.strip_prefix('_'))
        else {
            continue;
        };
        for (fi, feature) in schema.features.iter().enumerate() {
            if rest == feature || feature_aliases(feature).contains(&rest) {
                return Some(ci * f_n + fi);
            }
        }
    }
    None
}

fn convert_wide(text: &str, schema: &Schema) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::format("empty input"))?
        .map_err(|e| Error::format(e.to_string()))?;
    let ts_col = header
        .iter()
        .position(|h| {
            matches!(
                normalize_name(h).as_str(),
                "timestamp" | "datetime" | "date_time" | "date" | "time"
            )
        })
        .ok_or_else(|| {
            Error::format("unrecognized layout: no timestamp column and no KNMI header")
        })?;
    let mut mapping = Vec::new();
    let mut covered = vec![false; schema.columns()];
    for (i, h) in header.iter().enumerate() {
        if i == ts_col {
            continue;
        }
        let col = match_column(h, schema).ok_or_else(|| {
            Error::format(format!(
                "unrecognized layout: column `{h}` matches no {} series",
                schema.id
            ))
        })?;
        if std::mem::replace(&mut covered[col], true) {
            return Err(Error::format(format!(
                "column `{h}` duplicates another series"
            )));
        }
        mapping.push((i, col));
    }
    if let Some(missing) = covered.iter().position(|c| !c) {
        let f_n = schema.features.len();
        return Err(Error::format(format!(
            "no column for series {}",
            schema.column_name(missing / f_n, missing % f_n)
        )));
    }
    let mut rows = BTreeMap::new();
    for record in records {
        let record = record.map_err(|e| Error::format(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |m: String| Error::format(format!("line {line}: {m}"));
        let ts = record
            .get(ts_col)
            .and_then(parse_timestamp)
            .ok_or_else(|| {
                bad(format!(
                    "unparsable timestamp `{}`",
                    record.get(ts_col).unwrap_or("")
                ))
            })?;
        let mut grid = new_grid(schema);
        for &(i, col) in &mapping {
            let cell = record.get(i).unwrap_or("");
            if cell.is_empty() || matches!(cell, "NA" | "NaN" | "nan") {
                continue;
            }
            grid[col] = Some(
                cell.parse()
                    .map_err(|_| bad(format!("bad value `{cell}`")))?,
            );
        }
        if rows.insert(ts, grid).is_some() {
            return Err(bad(format!(
                "duplicate timestamp {}",
                format_timestamp(&ts)
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::format("input has no data rows"));
    }
    Ok(render(schema, &rows))
}
