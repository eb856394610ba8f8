//! Two-phase classifier extraction: labeled-data training on final outputs,
//! then distillation against softened API logits at the leaky timestep.

use serde::{Deserialize, Serialize};

use crate::data::SeqSample;
use crate::error::{Error, Result};
use crate::extraction::{fetch_teacher_outputs, ExtractionReport, PhaseLog};
use crate::losses::{LossKind, LossSpec};
use crate::metrics::accuracy;
use crate::ndcore::RngStream;
use crate::nn::{
    init_model, train, AdamState, CellKind, OutputMode, Schedule, SequenceModel, Supervision,
    TrainConfig, TrainSample,
};
use crate::oracle::{Oracle, OutputForm, OutputScope};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationAttack {
    pub substitute_cell: CellKind,
    pub hidden_dim: usize,
    /// Softening temperature used for both teacher and student during the
    /// distillation phase.
    pub temperature: f64,
    pub hard_epochs: usize,
    pub soft_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    /// Submit the teacher queries again on every distillation pass instead of
    /// reusing the first answers.
    pub count_cached: bool,
    /// Interleave one labeled epoch with one distillation epoch instead of
    /// running the phases back to back.
    pub alternate_phases: bool,
    pub seed: u64,
}

impl ClassificationAttack {
    pub fn new(seed: u64) -> Self {
        Self {
            substitute_cell: CellKind::Rnn,
            hidden_dim: 128,
            temperature: 16.0,
            hard_epochs: 110,
            soft_epochs: 110,
            batch_size: 50,
            learning_rate: 0.001,
            clip_norm: Some(5.0),
            count_cached: false,
            alternate_phases: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hard_epochs + self.soft_epochs == 0 {
            return Err(Error::invalid("at least one training epoch is needed"));
        }
        Ok(())
    }
}

/// Mean argmax accuracy of the model at one timestep: the final emitted
/// output when `step` is `None`, otherwise the per-step output at `step`.
pub fn accuracy_at_step(
    model: &SequenceModel,
    samples: &[SeqSample],
    step: Option<usize>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let outputs = model.predict(&s.inputs)?;
        let out = match step {
            None => outputs.last().ok_or(Error::EmptyInput("model outputs"))?,
            Some(t) => {
                if model.output_mode != OutputMode::PerStep {
                    return Err(Error::InsufficientObservability(
                        "per-timestep readout needs a model that emits every timestep",
                    ));
                }
                outputs.get(t).ok_or_else(|| {
                    Error::invalid(format!("timestep {t} beyond {} outputs", outputs.len()))
                })?
            }
        };
        preds.push(out.argmax());
        labels.push(s.class_index());
    }
    accuracy(&preds, &labels)
}

fn to_hard_samples(samples: &[SeqSample]) -> Vec<TrainSample> {
    samples
        .iter()
        .map(|s| TrainSample {
            inputs: s.inputs.clone(),
            target: s.target.clone(),
            teacher: None,
        })
        .collect()
}

/// Trains a fresh substitute against the API: first on the adversary's own
/// labels at the final timestep, then by matching the API's softened logits
/// at `leaky_time`. Returns the substitute and a report whose baseline metric
/// is the test accuracy after the last labeled-data update (final-timestep
/// readout) and whose final metric is the test accuracy at `leaky_time` after
/// distillation.
pub fn extract_classification(
    oracle: &Oracle,
    adversary: &[SeqSample],
    test: &[SeqSample],
    leaky_time: usize,
    cfg: &ClassificationAttack,
) -> Result<(SequenceModel, ExtractionReport)> {
    cfg.validate()?;
    if adversary.is_empty() {
        return Err(Error::EmptyInput("adversary samples"));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("test samples"));
    }
    match oracle.policy().form {
        OutputForm::Logits => {}
        _ => {
            return Err(Error::invalid(
                "classifier extraction needs an API that returns logits",
            ))
        }
    }
    let seq_len = adversary[0].len();
    for (i, s) in adversary.iter().enumerate() {
        if s.len() != seq_len {
            return Err(Error::invalid(format!(
                "adversary sample {i} has {} timesteps, expected {seq_len}",
                s.len()
            )));
        }
    }
    if leaky_time >= seq_len {
        return Err(Error::invalid(format!(
            "leaky time {leaky_time} out of range for {seq_len} timesteps"
        )));
    }
    if oracle.policy().scope == OutputScope::FinalOnly && leaky_time + 1 != seq_len {
        return Err(Error::InsufficientObservability(
            "distillation before the final timestep needs per-timestep API outputs",
        ));
    }

    let input_dim = adversary[0].input_dim();
    let classes = oracle.output_dim();
    let queries_before = oracle.ledger().total();

    let mut rng = RngStream::new(cfg.seed);
    let mut model = init_model(
        &mut rng,
        cfg.substitute_cell,
        input_dim,
        cfg.hidden_dim,
        classes,
        OutputMode::PerStep,
    )?;
    let mut adam_hard = AdamState::new(&model, cfg.learning_rate)?;
    let mut adam_soft = AdamState::new(&model, cfg.learning_rate)?;

    let hard_loss = LossSpec::new(LossKind::HardCe);
    let soft_loss = LossSpec::new(LossKind::SoftCeTemp).with_temperature(cfg.temperature);
    let hard_cfg = TrainConfig {
        schedule: Schedule::Epochs(1),
        batch_size: cfg.batch_size,
        supervision: Supervision::FinalStep,
        clip_norm: cfg.clip_norm,
    };
    let soft_cfg = TrainConfig {
        supervision: Supervision::AtStep(leaky_time),
        ..hard_cfg
    };

    let hard_samples = to_hard_samples(adversary);
    let mut soft_samples: Option<Vec<TrainSample>> = None;
    let mut phase_a = PhaseLog::empty();
    let mut phase_b = PhaseLog::empty();
    let mut baseline = None;

    let fetch_soft_samples = |oracle: &Oracle| -> Result<Vec<TrainSample>> {
        let teachers = fetch_teacher_outputs(
            oracle,
            adversary,
            Some(leaky_time),
            "teacher",
            !cfg.count_cached,
        )?;
        Ok(adversary
            .iter()
            .zip(teachers)
            .map(|(s, teacher)| TrainSample {
                inputs: s.inputs.clone(),
                target: s.target.clone(),
                teacher: Some(teacher),
            })
            .collect())
    };

    let passes = cfg.hard_epochs.max(cfg.soft_epochs);
    for pass in 0..passes {
        let run_hard = if cfg.alternate_phases {
            pass < cfg.hard_epochs
        } else {
            pass == 0
        };
        if run_hard {
            let schedule = if cfg.alternate_phases {
                Schedule::Epochs(1)
            } else {
                Schedule::Epochs(cfg.hard_epochs)
            };
            if cfg.hard_epochs > 0 {
                let log = train(
                    &mut model,
                    &hard_samples,
                    &hard_loss,
                    &TrainConfig { schedule, ..hard_cfg },
                    &mut adam_hard,
                    &mut rng,
                )?;
                phase_a.absorb(log.losses, log.updates);
                baseline = Some(accuracy_at_step(&model, test, None)?);
            }
        }

        let run_soft = if cfg.alternate_phases {
            pass < cfg.soft_epochs
        } else {
            pass == 0 && cfg.soft_epochs > 0
        };
        if run_soft {
            let need_fetch = soft_samples.is_none() || cfg.count_cached;
            if need_fetch {
                soft_samples = Some(fetch_soft_samples(oracle)?);
            }
            let epochs = if cfg.alternate_phases { 1 } else { cfg.soft_epochs };
            if !cfg.alternate_phases && cfg.count_cached {
                for e in 0..epochs {
                    if e > 0 {
                        soft_samples = Some(fetch_soft_samples(oracle)?);
                    }
                    let log = train(
                        &mut model,
                        soft_samples.as_ref().unwrap(),
                        &soft_loss,
                        &soft_cfg,
                        &mut adam_soft,
                        &mut rng,
                    )?;
                    phase_b.absorb(log.losses, log.updates);
                }
            } else {
                let log = train(
                    &mut model,
                    soft_samples.as_ref().unwrap(),
                    &soft_loss,
                    &TrainConfig {
                        schedule: Schedule::Epochs(epochs),
                        ..soft_cfg
                    },
                    &mut adam_soft,
                    &mut rng,
                )?;
                phase_b.absorb(log.losses, log.updates);
            }
        }

        if !cfg.alternate_phases && pass == 0 {
            break;
        }
    }

    let baseline_metric = match baseline {
        Some(b) => b,
        None => accuracy_at_step(&model, test, None)?,
    };
    let final_metric = accuracy_at_step(&model, test, Some(leaky_time))?;
    let final_step_metric = accuracy_at_step(&model, test, None)?;

    let report = ExtractionReport {
        task: "classification".to_string(),
        substitute_cell: cfg.substitute_cell,
        seed: cfg.seed,
        leaky_time: Some(leaky_time),
        temperature: Some(cfg.temperature),
        margin: None,
        bound_weight: None,
        phase_a,
        phase_b,
        metric_name: "accuracy".to_string(),
        baseline_metric,
        final_metric,
        final_step_metric: Some(final_step_metric),
        queries_used: oracle.ledger().total() - queries_before,
    };
    Ok((model, report))
}
