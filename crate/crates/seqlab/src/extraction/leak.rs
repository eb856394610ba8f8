//! Per-timestep probing of a prediction API to find where class information
//! becomes available.

use serde::Serialize;

use crate::data::SeqSample;
use crate::error::{Error, Result};
use crate::metrics::per_time_accuracy;
use crate::oracle::{Oracle, OutputForm, OutputScope};

/// Accuracy level at which a timestep counts as leaking the final answer.
pub const LEAK_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Serialize)]
pub struct LeakProfile {
    /// Argmax accuracy of the API's output at each timestep, measured against
    /// the probes' labels.
    pub per_time_accuracy: Vec<f64>,
    /// Earliest timestep (0-based) whose accuracy reaches the threshold.
    pub leaky_time: Option<usize>,
    pub threshold: f64,
    pub probes: usize,
    pub queries_used: u64,
}

/// Submits every probe sequence and scores the per-timestep argmax against
/// the probe labels. Requires an API that exposes all timesteps of a
/// classifier.
pub fn identify_leaky_time(
    oracle: &Oracle,
    probes: &[SeqSample],
    threshold: f64,
) -> Result<LeakProfile> {
    if probes.is_empty() {
        return Err(Error::EmptyInput("leak probes"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "leak threshold must be in (0, 1], got {threshold}"
        )));
    }
    if oracle.policy().scope != OutputScope::AllTimesteps {
        return Err(Error::InsufficientObservability(
            "leak scanning needs per-timestep outputs, but the API exposes only the final one",
        ));
    }
    if oracle.policy().form == OutputForm::RegressionValues {
        return Err(Error::invalid(
            "leak scanning applies to classifiers, not regression outputs",
        ));
    }
    let seq_len = probes[0].len();
    for (i, p) in probes.iter().enumerate() {
        if p.len() != seq_len {
            return Err(Error::invalid(format!(
                "probe {i} has {} timesteps, expected {seq_len}",
                p.len()
            )));
        }
    }

    let before = oracle.ledger().total();
    let labels: Vec<usize> = probes.iter().map(SeqSample::class_index).collect();
    let mut per_t_preds: Vec<Vec<usize>> = vec![Vec::with_capacity(probes.len()); seq_len];
    for probe in probes {
        let ans = oracle.query_tagged(&probe.inputs, "leak-scan")?;
        if ans.outputs.len() != seq_len {
            return Err(Error::Protocol(format!(
                "API returned {} outputs for {seq_len} timesteps",
                ans.outputs.len()
            )));
        }
        for (t, out) in ans.outputs.iter().enumerate() {
            per_t_preds[t].push(out.argmax());
        }
    }

    let per_time = per_time_accuracy(&per_t_preds, &labels)?;
    let leaky_time = per_time.iter().position(|&a| a >= threshold);
    Ok(LeakProfile {
        per_time_accuracy: per_time,
        leaky_time,
        threshold,
        probes: probes.len(),
        queries_used: oracle.ledger().total() - before,
    })
}
