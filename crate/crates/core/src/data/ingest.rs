use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::record::{HourlyDataset, HourlyRecord};
use crate::error::{Error, Result};

/// Longest run of missing hours that is filled by interpolation.
pub const MAX_INTERPOLATED_GAP: i64 = 3;

const FIELDS: [&str; 12] = [
    "timestamp",
    "load",
    "temp_fc",
    "temp_obs",
    "cloud_fc",
    "cloud_obs",
    "pressure_fc",
    "pressure_obs",
    "wind_speed_fc",
    "wind_speed_obs",
    "wind_dir_fc",
    "wind_dir_obs",
];

/// Maps each logical field to the CSV header that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap(pub HashMap<String, String>);

impl Default for ColumnMap {
    fn default() -> Self {
        Self(
            FIELDS
                .iter()
                .map(|f| (f.to_string(), f.to_string()))
                .collect(),
        )
    }
}

impl ColumnMap {
    pub fn with(mut self, field: &str, header: &str) -> Self {
        self.0.insert(field.to_string(), header.to_string());
        self
    }

    fn header<'a>(&'a self, field: &'a str) -> &'a str {
        self.0.get(field).map(String::as_str).unwrap_or(field)
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<HourlyDataset> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub(crate) fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s.trim_end_matches('Z'), fmt) {
            return Ok(t);
        }
    }
    Err(Error::InvalidTimestamp(s.to_string()))
}

pub(crate) fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[derive(Clone, Copy, Debug)]
struct RawRow {
    // indexed like FIELDS[1..]
    values: [Option<f64>; 11],
}

/// Parses the hourly CSV format. Up to three consecutive missing hours are
/// linearly interpolated and flagged; longer gaps are rejected.
pub fn ingest_reader<R: Read>(reader: R, schema: &ColumnMap) -> Result<HourlyDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = [0usize; 12];
    for (k, field) in FIELDS.iter().enumerate() {
        let name = schema.header(field);
        positions[k] = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut rows: Vec<(NaiveDateTime, RawRow, bool)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let ts = parse_timestamp(rec.get(positions[0]).unwrap_or(""))?;
        let mut values = [None; 11];
        for k in 1..12 {
            let cell = rec.get(positions[k]).unwrap_or("").trim();
            if cell.is_empty()
                || cell.eq_ignore_ascii_case("na")
                || cell.eq_ignore_ascii_case("nan")
            {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::InvalidValue {
                column: FIELDS[k].to_string(),
                timestamp: ts,
                value: cell.to_string(),
            })?;
            values[k - 1] = Some(v);
        }
        let row = RawRow { values };
        if let Some((prev_ts, prev_row, _)) = rows.last().copied() {
            let delta = ts - prev_ts;
            let minutes = delta.num_minutes();
            if minutes <= 0 {
                return Err(Error::NonMonotonicTimestamp {
                    previous: prev_ts,
                    next: ts,
                });
            }
            if minutes % 60 != 0 {
                return Err(Error::InvalidTimestamp(ts.to_string()));
            }
            let missing = minutes / 60 - 1;
            if missing > MAX_INTERPOLATED_GAP {
                return Err(Error::GapTooLarge {
                    after: prev_ts,
                    hours: missing,
                });
            }
            for m in 1..=missing {
                let frac = m as f64 / (missing + 1) as f64;
                let mut values = [None; 11];
                for k in 0..11 {
                    values[k] = match (prev_row.values[k], row.values[k]) {
                        (Some(a), Some(b)) if is_angle(k) => Some(interp_angle(a, b, frac)),
                        (Some(a), Some(b)) => Some(a + frac * (b - a)),
                        _ => None,
                    };
                }
                rows.push((
                    prev_ts + chrono::Duration::hours(m),
                    RawRow { values },
                    true,
                ));
            }
        }
        rows.push((ts, row, false));
    }

    // forecast columns must be complete: short runs of empty cells are filled
    for k in [1usize, 3, 5, 7, 9] {
        fill_column(&mut rows, k)?;
    }

    let records = rows
        .into_iter()
        .map(|(ts, row, interpolated)| {
            let v = row.values;
            HourlyRecord {
                timestamp: ts,
                load: v[0],
                temp_fc: v[1].unwrap_or(f64::NAN),
                temp_obs: v[2],
                cloud_fc: v[3].unwrap_or(f64::NAN),
                cloud_obs: v[4],
                pressure_fc: v[5].unwrap_or(f64::NAN),
                pressure_obs: v[6],
                wind_speed_fc: v[7].unwrap_or(f64::NAN),
                wind_speed_obs: v[8],
                wind_dir_fc: v[9].unwrap_or(f64::NAN),
                wind_dir_obs: v[10],
                interpolated,
            }
        })
        .collect();
    HourlyDataset::new(records)
}

fn is_angle(k: usize) -> bool {
    k == 9 || k == 10
}

fn interp_angle(a: f64, b: f64, frac: f64) -> f64 {
    let mut diff = (b - a) % 360.0;
    if diff > 180.0 {
        diff -= 360.0;
    } else if diff < -180.0 {
        diff += 360.0;
    }
    (a + frac * diff).rem_euclid(360.0)
}

fn fill_column(rows: &mut [(NaiveDateTime, RawRow, bool)], k: usize) -> Result<()> {
    let n = rows.len();
    let mut i = 0;
    while i < n {
        if rows[i].1.values[k].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && rows[i].1.values[k].is_none() {
            i += 1;
        }
        let len = (i - start) as i64;
        let after = if start > 0 {
            rows[start - 1].0
        } else {
            rows[start].0
        };
        if len > MAX_INTERPOLATED_GAP {
            return Err(Error::GapTooLarge { after, hours: len });
        }
        let left = (start > 0).then(|| rows[start - 1].1.values[k].unwrap());
        let right = (i < n).then(|| rows[i].1.values[k].unwrap());
        for (m, j) in (start..i).enumerate() {
            let frac = (m + 1) as f64 / (len + 1) as f64;
            let v = match (left, right) {
                (Some(a), Some(b)) if is_angle(k) => interp_angle(a, b, frac),
                (Some(a), Some(b)) => a + frac * (b - a),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => return Err(Error::GapTooLarge { after, hours: len }),
            };
            rows[j].1.values[k] = Some(v);
            rows[j].2 = true;
        }
    }
    Ok(())
}

/// Writes a dataset in the canonical column order; missing values are empty cells.
pub fn write_csv<W: Write>(ds: &HourlyDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FIELDS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in ds.records() {
        w.write_record([
            format_timestamp(r.timestamp),
            opt(r.load),
            r.temp_fc.to_string(),
            opt(r.temp_obs),
            r.cloud_fc.to_string(),
            opt(r.cloud_obs),
            r.pressure_fc.to_string(),
            opt(r.pressure_obs),
            r.wind_speed_fc.to_string(),
            opt(r.wind_speed_obs),
            r.wind_dir_fc.to_string(),
            opt(r.wind_dir_obs),
        ])?;
    }
    w.flush()?;
    Ok(())
}
