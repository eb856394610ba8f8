//! Hourly sensor CSV parsing, missing-value repair, normalization, and
//! 72-hour prediction windows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::data::SeqSample;
use crate::error::{Error, Result};
use crate::ndcore::Matrix2;

/// Sensor value recorded when a reading is missing.
pub const MISSING_SENTINEL: f64 = -200.0;

/// Hours of input context per window; the target is the following hour.
pub const INPUT_HOURS: usize = 72;

/// Longest repaired missing run (in hours) a window may overlap.
pub const MAX_GAP_HOURS: usize = 6;

/// Columns used as both model input and prediction target, in input order.
pub const DEFAULT_FEATURE_COLUMNS: [&str; 6] = [
    "T",
    "AH",
    "PT08.S1(CO)",
    "PT08.S2(NMHC)",
    "PT08.S3(NOx)",
    "PT08.S4(NO2)",
];

#[derive(Debug, Clone)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    /// One entry per data column (everything after Date and Time); `None`
    /// marks a missing reading.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct HourlyReadings {
    pub columns: Vec<String>,
    pub records: Vec<HourlyRecord>,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Repaired, normalized feature rows ready for windowing.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    /// Row-major: `values[row][feature]`, z-scored.
    pub values: Vec<Vec<f64>>,
    /// Per row, the longest missing run (across features) this row belonged
    /// to before repair; 0 for fully observed rows.
    pub gap_len: Vec<usize>,
    /// True when this row is not exactly one hour after the previous row.
    pub step_break: Vec<bool>,
    pub stats: NormStats,
    pub interpolated_cells: usize,
}

#[derive(Debug, Clone)]
pub struct WindowSet {
    /// Start row of each kept window; rows `start..start + INPUT_HOURS` are
    /// inputs and row `start + INPUT_HOURS` is the target.
    pub starts: Vec<usize>,
    pub dropped_gap_windows: usize,
}

fn parse_number(field: &str) -> std::result::Result<Option<f64>, ()> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let v: f64 = t.replace(',', ".").parse().map_err(|_| ())?;
    if v == MISSING_SENTINEL {
        Ok(None)
    } else {
        Ok(Some(v))
    }
}

pub fn parse_hourly_csv(reader: impl Read) -> Result<HourlyReadings> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or(Error::EmptyInput("hourly csv"))??;
    let names: Vec<&str> = header.split(';').map(str::trim).collect();
    if names.len() < 3 || names[0] != "Date" || names[1] != "Time" {
        return Err(Error::data(
            "header must start with Date;Time followed by data columns".to_string(),
        ));
    }
    let columns: Vec<String> = names[2..]
        .iter()
        .filter(|n| !n.is_empty())
        .map(|n| n.to_string())
        .collect();
    if columns.is_empty() {
        return Err(Error::data("no data columns in header".to_string()));
    }

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(';').collect();
        if fields.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if fields.len() < 2 + columns.len() {
            skipped += 1;
            continue;
        }
        let date = NaiveDate::parse_from_str(fields[0].trim(), "%d/%m/%Y");
        let time = NaiveTime::parse_from_str(fields[1].trim(), "%H.%M.%S");
        let (date, time) = match (date, time) {
            (Ok(d), Ok(t)) => (d, t),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let mut values = Vec::with_capacity(columns.len());
        let mut bad = false;
        for field in &fields[2..2 + columns.len()] {
            match parse_number(field) {
                Ok(v) => values.push(v),
                Err(()) => {
                    bad = true;
                    break;
                }
            }
        }
        if bad {
            skipped += 1;
            continue;
        }
        records.push(HourlyRecord {
            timestamp: date.and_time(time),
            values,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("hourly csv rows"));
    }
    Ok(HourlyReadings {
        columns,
        records,
        skipped_rows: skipped,
    })
}

pub fn load_hourly_csv(path: &Path) -> Result<HourlyReadings> {
    parse_hourly_csv(File::open(path)?)
}

/// Fills each missing run by linear interpolation between its observed
/// neighbors (nearest-value fill at the edges), records per-row run lengths,
/// then z-scores every feature with statistics taken from the rows selected
/// by `stats_filter`.
pub fn clean_and_normalize(
    readings: &HourlyReadings,
    feature_columns: &[String],
    stats_filter: impl Fn(&NaiveDateTime) -> bool,
) -> Result<FeatureTable> {
    if feature_columns.is_empty() {
        return Err(Error::EmptyInput("feature columns"));
    }
    let col_index: BTreeMap<&str, usize> = readings
        .columns
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut selected = Vec::with_capacity(feature_columns.len());
    for name in feature_columns {
        let idx = col_index.get(name.as_str()).ok_or_else(|| {
            Error::data(format!(
                "feature column {name:?} not present, file has {:?}",
                readings.columns
            ))
        })?;
        selected.push(*idx);
    }

    let n = readings.records.len();
    let f = selected.len();
    let mut values = vec![vec![0.0f64; f]; n];
    let mut gap_len = vec![0usize; n];
    let mut interpolated = 0usize;

    for (fi, &ci) in selected.iter().enumerate() {
        let observed: Vec<usize> = (0..n)
            .filter(|&r| readings.records[r].values[ci].is_some())
            .collect();
        if observed.is_empty() {
            return Err(Error::data(format!(
                "feature column {:?} has no observed values",
                feature_columns[fi]
            )));
        }
        for &r in &observed {
            values[r][fi] = readings.records[r].values[ci].unwrap();
        }
        let first = observed[0];
        let last = *observed.last().unwrap();
        for r in 0..first {
            values[r][fi] = values[first][fi];
        }
        for r in last + 1..n {
            values[r][fi] = values[last][fi];
        }
        if first > 0 {
            let run = first;
            for r in 0..first {
                gap_len[r] = gap_len[r].max(run);
            }
            interpolated += run;
        }
        if last + 1 < n {
            let run = n - last - 1;
            for r in last + 1..n {
                gap_len[r] = gap_len[r].max(run);
            }
            interpolated += run;
        }
        for w in observed.windows(2) {
            let (i, j) = (w[0], w[1]);
            if j == i + 1 {
                continue;
            }
            let run = j - i - 1;
            let (vi, vj) = (values[i][fi], values[j][fi]);
            for r in i + 1..j {
                let frac = (r - i) as f64 / (j - i) as f64;
                values[r][fi] = vi + (vj - vi) * frac;
                gap_len[r] = gap_len[r].max(run);
            }
            interpolated += run;
        }
    }

    let timestamps: Vec<NaiveDateTime> =
        readings.records.iter().map(|rec| rec.timestamp).collect();
    let mut step_break = vec![false; n];
    for r in 1..n {
        let delta = timestamps[r] - timestamps[r - 1];
        step_break[r] = delta != chrono::Duration::hours(1);
    }

    let stats_rows: Vec<usize> = (0..n).filter(|&r| stats_filter(&timestamps[r])).collect();
    if stats_rows.is_empty() {
        return Err(Error::invalid("statistics filter selected no rows"));
    }
    let mut mean = vec![0.0f64; f];
    let mut std = vec![0.0f64; f];
    for fi in 0..f {
        let m = stats_rows.iter().map(|&r| values[r][fi]).sum::<f64>() / stats_rows.len() as f64;
        let var = stats_rows
            .iter()
            .map(|&r| (values[r][fi] - m).powi(2))
            .sum::<f64>()
            / stats_rows.len() as f64;
        if var == 0.0 {
            return Err(Error::ZeroVariance { feature: fi });
        }
        mean[fi] = m;
        std[fi] = var.sqrt();
    }
    for row in values.iter_mut() {
        for fi in 0..f {
            row[fi] = (row[fi] - mean[fi]) / std[fi];
        }
    }

    Ok(FeatureTable {
        feature_names: feature_columns.to_vec(),
        timestamps,
        values,
        gap_len,
        step_break,
        stats: NormStats { mean, std },
        interpolated_cells: interpolated,
    })
}

impl FeatureTable {
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// Timestamp of the window's prediction target.
    pub fn target_time(&self, start: usize) -> NaiveDateTime {
        self.timestamps[start + INPUT_HOURS]
    }
}

/// Enumerates every window of `INPUT_HOURS` input rows plus a target row,
/// keeping those that overlap no missing run longer than `max_gap_hours`
/// and contain no timestamp discontinuity.
pub fn window_72h(table: &FeatureTable, max_gap_hours: usize) -> Result<WindowSet> {
    let n = table.rows();
    if n <= INPUT_HOURS {
        return Err(Error::invalid(format!(
            "need more than {INPUT_HOURS} rows, got {n}"
        )));
    }
    let mut starts = Vec::new();
    let mut dropped = 0usize;
    'outer: for start in 0..n - INPUT_HOURS {
        for r in start..=start + INPUT_HOURS {
            if table.gap_len[r] > max_gap_hours || (r > start && table.step_break[r]) {
                dropped += 1;
                continue 'outer;
            }
        }
        starts.push(start);
    }
    Ok(WindowSet {
        starts,
        dropped_gap_windows: dropped,
    })
}

pub fn window_sample(table: &FeatureTable, start: usize) -> Result<SeqSample> {
    if start + INPUT_HOURS >= table.rows() {
        return Err(Error::invalid(format!("window start {start} out of range")));
    }
    let f = table.feature_count();
    let mut inputs = Vec::with_capacity(INPUT_HOURS);
    for r in start..start + INPUT_HOURS {
        let mut x = Matrix2::zeros(f, 1)?;
        for fi in 0..f {
            x.set(fi, 0, table.values[r][fi]);
        }
        inputs.push(x);
    }
    let mut target = Matrix2::zeros(f, 1)?;
    for fi in 0..f {
        target.set(fi, 0, table.values[start + INPUT_HOURS][fi]);
    }
    SeqSample::new(inputs, target)
}

pub fn window_samples(table: &FeatureTable, starts: &[usize]) -> Result<Vec<SeqSample>> {
    starts.iter().map(|&s| window_sample(table, s)).collect()
}

pub fn default_feature_columns() -> Vec<String> {
    DEFAULT_FEATURE_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Filter selecting rows whose hour falls in the given calendar year.
pub fn year_filter(year: i32) -> impl Fn(&NaiveDateTime) -> bool {
    use chrono::Datelike;
    move |t| t.year() == year
}
