//! Dataset acquisition and partitioning: locate real files under the
//! configured root or the environment variable, or generate deterministic
//! stand-in data under the output directory, then apply the run's split.

use std::path::{Path, PathBuf};

use chrono::Datelike;

use seqlab::data::air_quality::{
    clean_and_normalize, default_feature_columns, load_hourly_csv, window_samples, window_72h,
    FeatureTable, MAX_GAP_HOURS,
};
use seqlab::data::mnist::{load_digits, DigitSet};
use seqlab::data::split::{counted_split, five_fold, hourly_split, SplitPlan, TRAIN_YEAR};
use seqlab::data::synth::{canonical_hourly_range, write_digit_files, write_hourly_csv};
use seqlab::data::SeqSample;
use seqlab::ndcore::RngStream;

use crate::config::{Config, SplitScheme, DATA_ROOT_ENV};
use crate::CliError;

/// Random stream reserved for dataset splitting, derived from the run seed.
pub const SPLIT_STREAM: u64 = 1;

/// Where the run's input files came from, recorded in the manifest.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum DataSource {
    Configured(PathBuf),
    Environment(PathBuf),
    Generated(PathBuf),
}

impl DataSource {
    pub fn root(&self) -> &Path {
        match self {
            DataSource::Configured(p) | DataSource::Environment(p) | DataSource::Generated(p) => p,
        }
    }

    pub fn is_generated(&self) -> bool {
        matches!(self, DataSource::Generated(_))
    }
}

/// Picks the data root: an explicitly configured directory, else the
/// `SEQLAB_DATA` environment variable, else a generated directory under
/// the output path. Named roots must exist; only the generated fallback
/// is created on demand.
pub fn resolve_source(cfg: &Config, out_dir: &Path) -> Result<DataSource, CliError> {
    if let Some(root) = &cfg.data.root {
        if !root.is_dir() {
            return Err(CliError::data(format!(
                "configured data root {} is not a directory",
                root.display()
            )));
        }
        return Ok(DataSource::Configured(root.clone()));
    }
    if let Ok(value) = std::env::var(DATA_ROOT_ENV) {
        if !value.is_empty() {
            let root = PathBuf::from(value);
            if !root.is_dir() {
                return Err(CliError::data(format!(
                    "{DATA_ROOT_ENV} points at {} which is not a directory",
                    root.display()
                )));
            }
            return Ok(DataSource::Environment(root));
        }
    }
    Ok(DataSource::Generated(out_dir.join("synth-data")))
}

fn require_file(root: &Path, name: &str) -> Result<PathBuf, CliError> {
    let path = root.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::data(format!(
            "expected data file {} is missing",
            path.display()
        )))
    }
}

/// Digit data partitioned for one run.
#[derive(Debug)]
pub struct DigitWorld {
    pub original: Vec<SeqSample>,
    pub adversary: Vec<SeqSample>,
    pub test: Vec<SeqSample>,
    pub plan: SplitPlan,
    pub source: DataSource,
}

fn head(limit: usize, available: usize) -> usize {
    if limit == 0 {
        available
    } else {
        limit.min(available)
    }
}

pub fn build_digit_world(cfg: &Config, out_dir: &Path) -> Result<DigitWorld, CliError> {
    let source = resolve_source(cfg, out_dir)?;
    let (train, test): (DigitSet, DigitSet) = match &source {
        DataSource::Generated(dir) => {
            let n_train = if cfg.data.digit_pool > 0 {
                cfg.data.digit_pool
            } else {
                60_000
            };
            let n_test = if cfg.data.digit_test > 0 {
                cfg.data.digit_test
            } else {
                10_000
            };
            let files = write_digit_files(dir, n_train, n_test, cfg.data.synth_seed)
                .map_err(CliError::from_data)?;
            (
                load_digits(&files.train_images, &files.train_labels)
                    .map_err(CliError::from_data)?,
                load_digits(&files.test_images, &files.test_labels).map_err(CliError::from_data)?,
            )
        }
        named => {
            let root = named.root();
            let train_images = require_file(root, "train-images-idx3-ubyte")?;
            let train_labels = require_file(root, "train-labels-idx1-ubyte")?;
            let test_images = require_file(root, "t10k-images-idx3-ubyte")?;
            let test_labels = require_file(root, "t10k-labels-idx1-ubyte")?;
            (
                load_digits(&train_images, &train_labels).map_err(CliError::from_data)?,
                load_digits(&test_images, &test_labels).map_err(CliError::from_data)?,
            )
        }
    };

    let pool = head(cfg.data.digit_pool, train.len());
    let n_test = head(cfg.data.digit_test, test.len());
    let mut rng = RngStream::new(cfg.seed).derive(SPLIT_STREAM);
    let plan = match cfg.split.scheme {
        SplitScheme::Counted => counted_split(
            pool,
            cfg.split.original_count,
            cfg.split.adversary_count,
            n_test,
            &mut rng,
        ),
        SplitScheme::FiveFold => five_fold(pool, n_test, cfg.split.fold, &mut rng),
    }
    .map_err(CliError::from_config)?;

    let original = train
        .to_sequences(&plan.original_train)
        .map_err(CliError::from_data)?;
    let adversary = train
        .to_sequences(&plan.adversary)
        .map_err(CliError::from_data)?;
    let test = test.to_sequences(&plan.test).map_err(CliError::from_data)?;
    Ok(DigitWorld {
        original,
        adversary,
        test,
        plan,
        source,
    })
}

/// Hourly sensor data windowed and partitioned for one run.
#[derive(Debug)]
pub struct HourlyWorld {
    pub original: Vec<SeqSample>,
    pub adversary: Vec<SeqSample>,
    pub test: Vec<SeqSample>,
    pub plan: SplitPlan,
    pub source: DataSource,
    pub table_rows: usize,
    pub windows_kept: usize,
    pub windows_dropped: usize,
}

pub fn build_hourly_world(cfg: &Config, out_dir: &Path) -> Result<HourlyWorld, CliError> {
    let source = resolve_source(cfg, out_dir)?;
    let csv_path = match &source {
        DataSource::Generated(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| {
                CliError::data(format!("cannot create {}: {e}", dir.display()))
            })?;
            let path = dir.join(&cfg.data.hourly_csv);
            let (start, canonical_hours) = canonical_hourly_range();
            let hours = if cfg.data.synth_hours > 0 {
                cfg.data.synth_hours
            } else {
                canonical_hours
            };
            write_hourly_csv(&path, cfg.data.synth_seed, start, hours)
                .map_err(CliError::from_data)?;
            path
        }
        named => require_file(named.root(), &cfg.data.hourly_csv)?,
    };

    let readings = load_hourly_csv(&csv_path).map_err(CliError::from_data)?;
    let train_months = cfg.split.train_months.clone();
    let stats_filter = move |t: &chrono::NaiveDateTime| {
        t.year() == TRAIN_YEAR && (train_months.is_empty() || train_months.contains(&t.month()))
    };
    let table: FeatureTable =
        clean_and_normalize(&readings, &default_feature_columns(), stats_filter)
            .map_err(CliError::from_data)?;
    let windows = window_72h(&table, MAX_GAP_HOURS).map_err(CliError::from_data)?;

    let mut plan = hourly_split(&table, &windows, &cfg.split.adversary_months)
        .map_err(CliError::from_config)?;
    if !cfg.split.train_months.is_empty() {
        plan.original_train.retain(|&start| {
            cfg.split
                .train_months
                .contains(&table.target_time(start).month())
        });
        plan.note = Some(format!(
            "original model trained on {} months {:?} only",
            TRAIN_YEAR, cfg.split.train_months
        ));
    }
    if plan.original_train.is_empty() {
        return Err(CliError::data(
            "no training-year windows survive the month filter".to_string(),
        ));
    }
    if plan.adversary.is_empty() {
        return Err(CliError::data(
            "no windows fall in the adversary months".to_string(),
        ));
    }
    if plan.test.is_empty() {
        return Err(CliError::data(
            "no test-year windows present in the data".to_string(),
        ));
    }

    let original = window_samples(&table, &plan.original_train).map_err(CliError::from_data)?;
    let adversary = window_samples(&table, &plan.adversary).map_err(CliError::from_data)?;
    let test = window_samples(&table, &plan.test).map_err(CliError::from_data)?;
    Ok(HourlyWorld {
        original,
        adversary,
        test,
        plan,
        source,
        table_rows: table.rows(),
        windows_kept: windows.starts.len(),
        windows_dropped: windows.dropped_gap_windows,
    })
}
