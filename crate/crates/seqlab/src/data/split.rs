//! Train/adversary/test partitions for both tasks.

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::data::air_quality::{FeatureTable, WindowSet};
use crate::error::{Error, Result};
use crate::ndcore::RngStream;

pub const TRAIN_YEAR: i32 = 2004;
pub const TEST_YEAR: i32 = 2005;

/// Index-based partition: `original_train` feeds the original model,
/// `adversary` is the attacker's labeled pool, `test` is held out.
/// For digit sets, `original_train` and `adversary` index the training array
/// and `test` indexes the separate test array; for hourly windows all three
/// hold window start rows of one table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub name: String,
    pub original_train: Vec<usize>,
    pub adversary: Vec<usize>,
    pub test: Vec<usize>,
    pub note: Option<String>,
}

/// Shuffles `n_train` sample indices into five equal folds; fold `fold_index`
/// becomes the adversary pool and the other four train the original model.
/// Any remainder after dividing by five stays with the original model and is
/// called out in the plan note.
pub fn five_fold(
    n_train: usize,
    n_test: usize,
    fold_index: usize,
    rng: &mut RngStream,
) -> Result<SplitPlan> {
    if fold_index >= 5 {
        return Err(Error::invalid(format!(
            "fold index {fold_index} out of range, expected 0..5"
        )));
    }
    let fold_size = n_train / 5;
    if fold_size == 0 {
        return Err(Error::invalid(format!(
            "{n_train} samples cannot be divided into five folds"
        )));
    }
    let mut indices: Vec<usize> = (0..n_train).collect();
    rng.shuffle(&mut indices);

    let fold_start = fold_index * fold_size;
    let adversary: Vec<usize> = indices[fold_start..fold_start + fold_size].to_vec();
    let original_train: Vec<usize> = indices[..fold_start]
        .iter()
        .chain(indices[fold_start + fold_size..].iter())
        .copied()
        .collect();

    let remainder = n_train % 5;
    let note = if remainder > 0 {
        Some(format!(
            "{n_train} samples do not divide by five, {remainder} extra kept in the original pool"
        ))
    } else {
        None
    };
    Ok(SplitPlan {
        name: format!("fold-{fold_index}"),
        original_train,
        adversary,
        test: (0..n_test).collect(),
        note,
    })
}

/// Shuffles a pool and deals out fixed-size original and adversary subsets.
pub fn counted_split(
    n_pool: usize,
    n_original: usize,
    n_adversary: usize,
    n_test: usize,
    rng: &mut RngStream,
) -> Result<SplitPlan> {
    if n_original == 0 || n_adversary == 0 {
        return Err(Error::invalid("both subset sizes must be nonzero"));
    }
    if n_original + n_adversary > n_pool {
        return Err(Error::invalid(format!(
            "pool of {n_pool} cannot supply {n_original} + {n_adversary} samples"
        )));
    }
    let mut indices: Vec<usize> = (0..n_pool).collect();
    rng.shuffle(&mut indices);
    Ok(SplitPlan {
        name: format!("counted-{n_original}-{n_adversary}"),
        original_train: indices[..n_original].to_vec(),
        adversary: indices[n_original..n_original + n_adversary].to_vec(),
        test: (0..n_test).collect(),
        note: None,
    })
}

/// Months of the training year whose windows the adversary owns, one plan per
/// experiment in the month-combination sweep.
pub const ADVERSARY_MONTH_SETS: [&[u32]; 5] = [
    &[4, 5, 6],
    &[7, 8, 9],
    &[10, 11, 12],
    &[4, 5, 6, 7, 8, 9],
    &[7, 8, 9, 10, 11, 12],
];

pub fn month_set_name(months: &[u32]) -> String {
    let parts: Vec<String> = months.iter().map(|m| m.to_string()).collect();
    format!("months-{}", parts.join("-"))
}

/// Partitions windows by the calendar time of each window's target hour:
/// training-year targets feed the original model, test-year targets are held
/// out, and the adversary owns the training-year windows whose target month
/// is in `months`.
pub fn hourly_split(
    table: &FeatureTable,
    windows: &WindowSet,
    months: &[u32],
) -> Result<SplitPlan> {
    if months.is_empty() {
        return Err(Error::EmptyInput("adversary months"));
    }
    for &m in months {
        if !(1..=12).contains(&m) {
            return Err(Error::invalid(format!("month {m} out of range")));
        }
    }
    let mut original_train = Vec::new();
    let mut adversary = Vec::new();
    let mut test = Vec::new();
    for &start in &windows.starts {
        let target = table.target_time(start);
        if target.year() == TEST_YEAR {
            test.push(start);
        } else if target.year() == TRAIN_YEAR {
            original_train.push(start);
            if months.contains(&target.month()) {
                adversary.push(start);
            }
        }
    }
    Ok(SplitPlan {
        name: month_set_name(months),
        original_train,
        adversary,
        test,
        note: None,
    })
}

/// One plan per month combination in `ADVERSARY_MONTH_SETS`.
pub fn hourly_split_suite(table: &FeatureTable, windows: &WindowSet) -> Result<Vec<SplitPlan>> {
    ADVERSARY_MONTH_SETS
        .iter()
        .map(|months| hourly_split(table, windows, months))
        .collect()
}
