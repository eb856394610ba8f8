use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::ndcore::{Matrix2, RngStream};
use crate::nn::adam::AdamState;
use crate::nn::bptt::Gradients;
use crate::nn::model::{OutputMode, SequenceModel};
use serde::{Deserialize, Serialize};

/// Which emitted timesteps the loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Every emitted timestep, loss averaged across them.
    AllSteps,
    /// Only the last timestep.
    FinalStep,
    /// One specific timestep (per-step output mode only).
    AtStep(usize),
}

/// Training length: whole passes over the data, or a fixed number of
/// optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Epochs(usize),
    Iterations(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub batch_size: usize,
    pub supervision: Supervision,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(schedule: Schedule, batch_size: usize, supervision: Supervision) -> Self {
        TrainConfig {
            schedule,
            batch_size,
            supervision,
            clip_norm: Some(5.0),
        }
    }
}

/// One training example: an input sequence, its label (one-hot) or
/// regression target, and optionally a teacher signal (oracle logits or
/// predictions at the supervised timestep) for distillation losses.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub inputs: Vec<Matrix2>,
    pub target: Matrix2,
    pub teacher: Option<Matrix2>,
}

/// Loss curve and counters from one training run. `losses` holds the mean
/// per-sample loss of each full pass over the data (plus a final partial
/// pass under an iteration schedule).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub updates: usize,
    pub clamp_events: u64,
}

struct BatchOutcome {
    loss_sum: f64,
    clamped: u64,
}

fn supervised_indices(
    mode: OutputMode,
    supervision: Supervision,
    emitted: usize,
) -> Result<Vec<usize>> {
    match (mode, supervision) {
        (_, Supervision::FinalStep) => Ok(vec![emitted - 1]),
        (_, Supervision::AllSteps) => Ok((0..emitted).collect()),
        (OutputMode::PerStep, Supervision::AtStep(t)) => {
            if t >= emitted {
                return Err(Error::invalid(format!(
                    "supervised timestep {t} out of range, sequence emits {emitted} outputs"
                )));
            }
            Ok(vec![t])
        }
        (OutputMode::FinalOnly, Supervision::AtStep(_)) => Err(Error::InsufficientObservability(
            "cannot supervise an intermediate timestep of a final-only model",
        )),
    }
}

fn run_batch(
    model: &mut SequenceModel,
    samples: &[TrainSample],
    batch: &[usize],
    loss: &LossSpec,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    grads: &mut Gradients,
) -> Result<BatchOutcome> {
    grads.zero();
    let mut loss_sum = 0.0;
    let mut clamped = 0u64;

    for &idx in batch {
        let sample = &samples[idx];
        let (outputs, trace) = model.forward(&sample.inputs)?;
        let steps = supervised_indices(model.output_mode, cfg.supervision, outputs.len())?;
        let scale = 1.0 / steps.len() as f64;

        let mut dlogits = vec![Matrix2::zeros(model.output_dim, 1)?; outputs.len()];
        let mut sample_loss = 0.0;
        for &j in &steps {
            let lg = loss.evaluate(&outputs[j], &sample.target, sample.teacher.as_ref())?;
            sample_loss += scale * lg.value;
            if lg.clamped {
                clamped += 1;
            }
            dlogits[j] = lg.grad.scaled(scale);
        }
        loss_sum += sample_loss;
        model.bptt_into(&trace, &dlogits, grads)?;
    }

    grads.scale_assign(1.0 / batch.len() as f64);
    if let Some(max_norm) = cfg.clip_norm {
        grads.clip_global_norm(max_norm);
    }
    adam.apply(model, grads)?;
    Ok(BatchOutcome { loss_sum, clamped })
}

/// Mini-batch training loop. Shuffles per pass with `rng`, processes
/// `⌊n / batch_size⌋` batches per pass (the whole set as one batch when it
/// is smaller than `batch_size`), and honors either schedule kind.
pub fn train(
    model: &mut SequenceModel,
    samples: &[TrainSample],
    loss: &LossSpec,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut RngStream,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1".to_string()));
    }
    loss.validate()?;
    for s in samples {
        if loss.needs_teacher() && s.teacher.is_none() {
            return Err(Error::invalid(format!(
                "{:?} loss needs a teacher signal on every sample",
                loss.kind
            )));
        }
        if s.inputs.is_empty() {
            return Err(Error::EmptyInput("training sample with empty sequence"));
        }
    }

    let n = samples.len();
    let batch_size = cfg.batch_size.min(n);
    let batches_per_pass = n / batch_size;
    let updates_target = match cfg.schedule {
        Schedule::Epochs(e) => e * batches_per_pass,
        Schedule::Iterations(i) => i,
    };

    let mut log = TrainLog::default();
    let mut grads = Gradients::zeros_like(model)?;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut pass_loss = 0.0;
    let mut pass_samples = 0usize;

    'outer: loop {
        if log.updates >= updates_target {
            break;
        }
        rng.shuffle(&mut indices);
        for b in 0..batches_per_pass {
            let batch = &indices[b * batch_size..(b + 1) * batch_size];
            let outcome = run_batch(model, samples, batch, loss, cfg, adam, &mut grads)?;
            pass_loss += outcome.loss_sum;
            pass_samples += batch.len();
            log.clamp_events += outcome.clamped;
            log.updates += 1;
            if log.updates >= updates_target {
                break 'outer;
            }
        }
        log.losses.push(pass_loss / pass_samples as f64);
        pass_loss = 0.0;
        pass_samples = 0;
    }
    if pass_samples > 0 {
        log.losses.push(pass_loss / pass_samples as f64);
    }
    Ok(log)
}
