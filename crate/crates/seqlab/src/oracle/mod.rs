//! The prediction API the adversary queries: output policy, query accounting,
//! and a line-delimited JSON network front end.

pub mod wire;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::softmax_temp;
use crate::ndcore::Matrix2;
use crate::nn::{OutputMode, SequenceModel};

/// Which timesteps of a prediction the API exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScope {
    AllTimesteps,
    FinalOnly,
}

/// What the API returns for each exposed timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputForm {
    Logits,
    SoftLabels { temperature: f64 },
    RegressionValues,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OraclePolicy {
    pub scope: OutputScope,
    pub form: OutputForm,
    /// Total queries the API will answer, `None` for unlimited.
    pub budget: Option<u64>,
}

impl OraclePolicy {
    pub fn new(scope: OutputScope, form: OutputForm) -> Self {
        Self {
            scope,
            form,
            budget: None,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let OutputForm::SoftLabels { temperature } = self.form {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::invalid(format!(
                    "soft label temperature must be positive, got {temperature}"
                )));
            }
        }
        Ok(())
    }
}

/// Thread-safe count of answered queries, total and per caller tag.
#[derive(Debug, Default)]
pub struct QueryLedger {
    total: AtomicU64,
    tags: Mutex<BTreeMap<String, u64>>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    pub fn tagged(&self, tag: &str) -> u64 {
        *self.tags.lock().unwrap().get(tag).unwrap_or(&0)
    }

    pub fn by_tag(&self) -> BTreeMap<String, u64> {
        self.tags.lock().unwrap().clone()
    }

    /// Reserves one query against `budget`, returning the new total.
    fn charge(&self, tag: Option<&str>, budget: Option<u64>) -> Result<u64> {
        let reserved = self
            .total
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |current| match budget {
                Some(b) if current >= b => None,
                _ => Some(current + 1),
            });
        match reserved {
            Ok(prev) => {
                if let Some(tag) = tag {
                    *self.tags.lock().unwrap().entry(tag.to_string()).or_insert(0) += 1;
                }
                Ok(prev + 1)
            }
            Err(_) => Err(Error::BudgetExhausted {
                budget: budget.unwrap_or(0),
            }),
        }
    }
}

/// Anything that can answer a sequence with one output vector per timestep it
/// chooses to emit; the live implementation wraps a trained model.
pub trait Predictor: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Emitted logits (or raw regression outputs), one per exposed timestep.
    fn predict_emitted(&self, seq: &[Matrix2]) -> Result<Vec<Matrix2>>;
    /// True when every timestep of the input produces an emitted output.
    fn emits_all_timesteps(&self) -> bool;
}

impl Predictor for SequenceModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict_emitted(&self, seq: &[Matrix2]) -> Result<Vec<Matrix2>> {
        self.predict(seq)
    }

    fn emits_all_timesteps(&self) -> bool {
        self.output_mode == OutputMode::PerStep
    }
}

/// One answered query: the outputs the policy exposed and the ledger total
/// after charging it.
#[derive(Debug, Clone)]
pub struct OracleAnswer {
    pub outputs: Vec<Matrix2>,
    pub queries_used: u64,
}

/// Outputs for a batch, cut short when the budget ran out mid-batch.
#[derive(Debug, Clone)]
pub struct BatchAnswer {
    pub outputs: Vec<Vec<Matrix2>>,
    pub truncated: bool,
    pub queries_used: u64,
}

pub struct Oracle {
    predictor: Box<dyn Predictor>,
    policy: OraclePolicy,
    ledger: QueryLedger,
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("policy", &self.policy)
            .field("queries", &self.ledger.total())
            .finish_non_exhaustive()
    }
}

impl Oracle {
    pub fn new(model: SequenceModel, policy: OraclePolicy) -> Result<Self> {
        Self::with_predictor(Box::new(model), policy)
    }

    pub fn with_predictor(predictor: Box<dyn Predictor>, policy: OraclePolicy) -> Result<Self> {
        policy.validate()?;
        if policy.scope == OutputScope::AllTimesteps && !predictor.emits_all_timesteps() {
            return Err(Error::InsufficientObservability(
                "policy exposes all timesteps but the model emits only its final output",
            ));
        }
        Ok(Self {
            predictor,
            policy,
            ledger: QueryLedger::new(),
        })
    }

    pub fn policy(&self) -> &OraclePolicy {
        &self.policy
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn input_dim(&self) -> usize {
        self.predictor.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.predictor.output_dim()
    }

    fn answer(
        &self,
        seq: &[Matrix2],
        temp_override: Option<f64>,
        tag: Option<&str>,
    ) -> Result<OracleAnswer> {
        if seq.is_empty() {
            return Err(Error::EmptyInput("query sequence"));
        }
        let dim = self.predictor.input_dim();
        for (t, x) in seq.iter().enumerate() {
            if x.rows() != dim || x.cols() != 1 {
                return Err(Error::invalid(format!(
                    "timestep {t} has shape {:?}, expected ({dim}, 1)",
                    x.shape()
                )));
            }
        }
        if let Some(t) = temp_override {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::invalid(format!(
                    "temperature override must be positive, got {t}"
                )));
            }
            if self.policy.form == OutputForm::RegressionValues {
                return Err(Error::invalid(
                    "temperature does not apply to regression outputs",
                ));
            }
        }

        let queries_used = self.ledger.charge(tag, self.policy.budget)?;
        let emitted = self.predictor.predict_emitted(seq)?;
        let exposed: Vec<Matrix2> = match self.policy.scope {
            OutputScope::AllTimesteps => emitted,
            OutputScope::FinalOnly => vec![emitted.into_iter().next_back().ok_or(
                Error::EmptyInput("model emitted no outputs"),
            )?],
        };

        let outputs = match (self.policy.form, temp_override) {
            (OutputForm::RegressionValues, _) => exposed,
            (OutputForm::Logits, None) => exposed,
            (OutputForm::Logits, Some(t)) | (OutputForm::SoftLabels { .. }, Some(t)) => exposed
                .iter()
                .map(|v| softmax_temp(v, t))
                .collect::<Result<_>>()?,
            (OutputForm::SoftLabels { temperature }, None) => exposed
                .iter()
                .map(|v| softmax_temp(v, temperature))
                .collect::<Result<_>>()?,
        };
        Ok(OracleAnswer {
            outputs,
            queries_used,
        })
    }

    /// Answers one sequence, charging one query.
    pub fn query(&self, seq: &[Matrix2]) -> Result<OracleAnswer> {
        self.answer(seq, None, None)
    }

    pub fn query_tagged(&self, seq: &[Matrix2], tag: &str) -> Result<OracleAnswer> {
        self.answer(seq, None, Some(tag))
    }

    /// Like `query`, with the softening temperature chosen per request;
    /// rejected for regression policies.
    pub fn query_with_temperature(
        &self,
        seq: &[Matrix2],
        temp: Option<f64>,
    ) -> Result<OracleAnswer> {
        self.answer(seq, temp, None)
    }

    /// Answers sequences in order until done or the budget runs out; a
    /// truncated answer carries the outputs produced before the cutoff.
    pub fn query_batch(&self, seqs: &[Vec<Matrix2>], tag: Option<&str>) -> Result<BatchAnswer> {
        let mut outputs = Vec::with_capacity(seqs.len());
        for seq in seqs {
            match self.answer(seq, None, tag) {
                Ok(ans) => outputs.push(ans.outputs),
                Err(Error::BudgetExhausted { .. }) => {
                    return Ok(BatchAnswer {
                        outputs,
                        truncated: true,
                        queries_used: self.ledger.total(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(BatchAnswer {
            outputs,
            truncated: false,
            queries_used: self.ledger.total(),
        })
    }
}
