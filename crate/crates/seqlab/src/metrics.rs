//! Evaluation metrics and their CSV emission: classification accuracy,
//! per-timestep accuracy, the coefficient of determination R² (averaged
//! across output features), and cross-fold aggregation.

use crate::error::{Error, Result};
use crate::ndcore::Matrix2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Fraction of positions where the labels agree.
pub fn accuracy(pred_labels: &[usize], true_labels: &[usize]) -> Result<f64> {
    if pred_labels.len() != true_labels.len() {
        return Err(Error::invalid(format!(
            "label lists differ in length: {} vs {}",
            pred_labels.len(),
            true_labels.len()
        )));
    }
    if pred_labels.is_empty() {
        return Err(Error::EmptyInput("accuracy of empty label lists"));
    }
    let hits = pred_labels
        .iter()
        .zip(true_labels)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / pred_labels.len() as f64)
}

/// Accuracy at each timestep independently. `per_t_preds[t]` holds the
/// predicted labels for timestep t across the whole probe set.
pub fn per_time_accuracy(per_t_preds: &[Vec<usize>], labels: &[usize]) -> Result<Vec<f64>> {
    if per_t_preds.is_empty() {
        return Err(Error::EmptyInput("per-timestep accuracy with no timesteps"));
    }
    per_t_preds
        .iter()
        .map(|preds| {
            if preds.len() != labels.len() {
                return Err(Error::invalid(format!(
                    "ragged per-timestep predictions: {} vs {} labels",
                    preds.len(),
                    labels.len()
                )));
            }
            accuracy(preds, labels)
        })
        .collect()
}

/// R² per output feature plus their unweighted mean. Predictions and
/// targets are column vectors of equal dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RSquared {
    pub mean: f64,
    pub per_feature: Vec<f64>,
}

/// Coefficient of determination 1 − SS_res/SS_tot, computed per feature
/// and averaged. A feature with zero variance in the targets makes the
/// ratio undefined and is reported as an error.
pub fn r_squared(targets: &[Matrix2], predictions: &[Matrix2]) -> Result<RSquared> {
    if targets.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "target/prediction counts differ: {} vs {}",
            targets.len(),
            predictions.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::EmptyInput("r_squared needs at least two samples"));
    }
    let dim = targets[0].rows();
    for (y, p) in targets.iter().zip(predictions) {
        if y.shape() != (dim, 1) || p.shape() != (dim, 1) {
            return Err(Error::ShapeMismatch {
                op: "r_squared",
                left: (dim, 1),
                right: if y.shape() != (dim, 1) {
                    y.shape()
                } else {
                    p.shape()
                },
            });
        }
    }

    let n = targets.len() as f64;
    let mut per_feature = Vec::with_capacity(dim);
    for f in 0..dim {
        let mean: f64 = targets.iter().map(|y| y.get(f, 0)).sum::<f64>() / n;
        let ss_tot: f64 = targets
            .iter()
            .map(|y| {
                let d = y.get(f, 0) - mean;
                d * d
            })
            .sum();
        if ss_tot == 0.0 {
            return Err(Error::ZeroVariance { feature: f });
        }
        let ss_res: f64 = targets
            .iter()
            .zip(predictions)
            .map(|(y, p)| {
                let d = y.get(f, 0) - p.get(f, 0);
                d * d
            })
            .sum();
        per_feature.push(1.0 - ss_res / ss_tot);
    }
    let mean = per_feature.iter().sum::<f64>() / dim as f64;
    Ok(RSquared { mean, per_feature })
}

/// One metric observation with its context tags. Absent tags serialize
/// as empty CSV fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub n: usize,
    pub fold: Option<usize>,
    pub seed: Option<u64>,
    pub timestep: Option<usize>,
    pub budget: Option<u64>,
    pub phase: Option<String>,
}

impl MetricRow {
    pub fn new(name: impl Into<String>, value: f64, n: usize) -> Self {
        MetricRow {
            name: name.into(),
            value,
            n,
            fold: None,
            seed: None,
            timestep: None,
            budget: None,
            phase: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_fold(mut self, fold: usize) -> Self {
        self.fold = Some(fold);
        self
    }

    pub fn with_timestep(mut self, t: usize) -> Self {
        self.timestep = Some(t);
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_phase(mut self, phase: impl Into<String>) -> Self {
        self.phase = Some(phase.into());
        self
    }
}

/// Mean and sample standard deviation of one metric name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Group rows by metric name; single observations report std 0.
pub fn aggregate_folds(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for row in rows {
        groups.entry(&row.name).or_default().push(row.value);
    }
    groups
        .into_iter()
        .map(|(name, values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                var.sqrt()
            } else {
                0.0
            };
            Aggregate {
                name: name.to_string(),
                mean,
                std,
                count: n,
            }
        })
        .collect()
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Deterministic CSV for metric rows. Rows are sorted by
/// (name, fold, seed, timestep, budget, phase) so identical runs emit
/// byte-identical files; floats use Rust's shortest round-trip form.
pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.name, a.fold, a.seed, a.timestep, a.budget, &a.phase).cmp(&(
            &b.name, b.fold, b.seed, b.timestep, b.budget, &b.phase,
        ))
    });
    let mut out = String::from("name,value,n,fold,seed,timestep,budget,phase\n");
    for r in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.name,
            r.value,
            r.n,
            fmt_opt(&r.fold),
            fmt_opt(&r.seed),
            fmt_opt(&r.timestep),
            fmt_opt(&r.budget),
            fmt_opt(&r.phase),
        );
    }
    out
}

/// CSV for aggregates: name,mean,std,count. Input order is preserved
/// (already grouped deterministically).
pub fn aggregates_to_csv(aggs: &[Aggregate]) -> String {
    let mut out = String::from("name,mean,std,count\n");
    for a in aggs {
        let _ = writeln!(out, "{},{},{},{}", a.name, a.mean, a.std, a.count);
    }
    out
}
