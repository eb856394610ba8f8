//! Finite-difference gradient checking.
//!
//! The numeric side only ever calls `forward` plus a loss value, so it is
//! independent of the backpropagation code it verifies. Relative error
//! uses the denominator max(1e-6, |analytic| + |numeric|); the floor keeps
//! entries whose true magnitude sits below the finite-difference noise
//! floor from registering as relative disagreement while still flagging
//! any absolute error above 1e-10.

use crate::error::Result;
use crate::losses::LossSpec;
use crate::ndcore::{Matrix2, RngStream};
use crate::nn::{
    init_model, CellKind, Gradients, OutputMode, SequenceModel, Supervision, TrainSample,
};

/// Worst observed deviation across all checked parameter entries.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn supervised_steps(mode: OutputMode, supervision: Supervision, emitted: usize) -> Vec<usize> {
    match (mode, supervision) {
        (_, Supervision::FinalStep) => vec![emitted - 1],
        (_, Supervision::AllSteps) => (0..emitted).collect(),
        (_, Supervision::AtStep(t)) => vec![t],
    }
}

/// Loss of one sample exactly as the training loop defines it: mean of
/// the per-timestep losses over the supervised timesteps.
pub fn sample_loss(
    model: &SequenceModel,
    sample: &TrainSample,
    loss: &LossSpec,
    supervision: Supervision,
) -> Result<f64> {
    let (outputs, _) = model.forward(&sample.inputs)?;
    let steps = supervised_steps(model.output_mode, supervision, outputs.len());
    let scale = 1.0 / steps.len() as f64;
    let mut total = 0.0;
    for &j in &steps {
        total += scale
            * loss
                .evaluate(&outputs[j], &sample.target, sample.teacher.as_ref())?
                .value;
    }
    Ok(total)
}

/// Analytic gradients of `sample_loss` via backpropagation through time.
pub fn analytic_grads(
    model: &SequenceModel,
    sample: &TrainSample,
    loss: &LossSpec,
    supervision: Supervision,
) -> Result<Gradients> {
    let (outputs, trace) = model.forward(&sample.inputs)?;
    let steps = supervised_steps(model.output_mode, supervision, outputs.len());
    let scale = 1.0 / steps.len() as f64;
    let mut dlogits = vec![Matrix2::zeros(model.output_dim, 1)?; outputs.len()];
    for &j in &steps {
        let lg = loss.evaluate(&outputs[j], &sample.target, sample.teacher.as_ref())?;
        dlogits[j] = lg.grad.scaled(scale);
    }
    model.bptt(&trace, &dlogits)
}

/// Compare analytic gradients against central finite differences over
/// every parameter entry.
pub fn check_model_gradients(
    model: &mut SequenceModel,
    sample: &TrainSample,
    loss: &LossSpec,
    supervision: Supervision,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_grads(model, sample, loss, supervision)?;
    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };

    let param_count = names.len();
    for p_idx in 0..param_count {
        let entries = model.param_vec()[p_idx].len();
        for e_idx in 0..entries {
            let original = model.param_vec()[p_idx].as_slice()[e_idx];

            model.param_vec_mut()[p_idx].as_mut_slice()[e_idx] = original + h;
            let up = sample_loss(model, sample, loss, supervision)?;
            model.param_vec_mut()[p_idx].as_mut_slice()[e_idx] = original - h;
            let down = sample_loss(model, sample, loss, supervision)?;
            model.param_vec_mut()[p_idx].as_mut_slice()[e_idx] = original;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.param_vec()[p_idx].as_slice()[e_idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = format!("{}[{}]", names[p_idx], e_idx);
            }
        }
    }
    Ok(report)
}

/// Standard randomized instance: 3 timesteps, 4 hidden units, and a
/// loss-appropriate target, checked at h = 1e-4. Classification losses get
/// a one-hot label, regression losses a dense target; the regression
/// teacher is placed close to the target so the bound term's gating branch
/// cannot flip inside the finite-difference stencil.
pub fn standard_check(
    cell_kind: CellKind,
    output_mode: OutputMode,
    supervision: Supervision,
    loss: &LossSpec,
    seed: u64,
) -> Result<GradCheckReport> {
    use crate::losses::LossKind;

    let mut rng = RngStream::new(seed);
    let input_dim = 3;
    let output_dim = 4;
    let mut model = init_model(&mut rng, cell_kind, input_dim, 4, output_dim, output_mode)?;
    let inputs: Vec<Matrix2> = (0..3)
        .map(|_| Matrix2::rand_uniform(&mut rng, input_dim, 1, -1.0, 1.0))
        .collect::<Result<_>>()?;

    let classification = matches!(
        loss.kind,
        LossKind::HardCe | LossKind::SoftCeTemp | LossKind::MuCombined
    );
    let target = if classification {
        let mut onehot = Matrix2::zeros(output_dim, 1)?;
        onehot.set(rng.below(output_dim as u64) as usize, 0, 1.0);
        onehot
    } else {
        Matrix2::rand_uniform(&mut rng, output_dim, 1, -1.0, 1.0)?
    };
    let teacher = if loss.needs_teacher() {
        if loss.kind == LossKind::LReg {
            let noise = Matrix2::rand_uniform(&mut rng, output_dim, 1, -0.1, 0.1)?;
            Some(target.add(&noise)?)
        } else {
            Some(Matrix2::rand_uniform(&mut rng, output_dim, 1, -1.0, 1.0)?)
        }
    } else {
        None
    };
    let sample = TrainSample {
        inputs,
        target,
        teacher,
    };
    check_model_gradients(&mut model, &sample, loss, supervision, 1e-4)
}
