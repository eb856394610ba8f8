//! Query-budget sweep: rerun the classification attack with growing slices
//! of the adversary pool and record how far each budget gets.

use serde::Serialize;

use crate::data::SeqSample;
use crate::error::{Error, Result};
use crate::extraction::{accuracy_at_step, extract_classification, ClassificationAttack};
use crate::ndcore::RngStream;
use crate::nn::{init_model, OutputMode};
use crate::oracle::Oracle;

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    /// Requested number of adversary samples.
    pub budget: u64,
    /// Samples actually used, after clamping to the pool size.
    pub granted: u64,
    pub clamped: bool,
    pub seed: u64,
    /// Test accuracy after the labeled phase, at the final timestep.
    pub hard_metric: f64,
    /// Test accuracy after distillation, at the attack timestep.
    pub soft_metric: f64,
    pub queries_used: u64,
}

/// Runs the classification attack once per budget, training on the first
/// `budget` adversary samples each time. Budgets must be strictly ascending.
/// A budget of zero records the untrained substitute's accuracy and spends
/// no queries. Each point derives its own seed from `cfg.seed` so runs stay
/// independently reproducible.
pub fn classification_budget_sweep(
    oracle: &Oracle,
    adversary: &[SeqSample],
    test: &[SeqSample],
    leaky_time: usize,
    budgets: &[u64],
    cfg: &ClassificationAttack,
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if budgets.is_empty() {
        return Err(Error::EmptyInput("budgets"));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("budgets must be strictly ascending"));
    }
    if adversary.is_empty() {
        return Err(Error::EmptyInput("adversary samples"));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("test samples"));
    }

    let root = RngStream::new(cfg.seed);
    let mut points = Vec::with_capacity(budgets.len());
    for (i, &budget) in budgets.iter().enumerate() {
        let granted = budget.min(adversary.len() as u64);
        let seed = root.derive(1000 + i as u64).seed();
        let point = if granted == 0 {
            let mut rng = RngStream::new(seed);
            let blank = init_model(
                &mut rng,
                cfg.substitute_cell,
                test[0].input_dim(),
                cfg.hidden_dim,
                oracle.output_dim(),
                OutputMode::PerStep,
            )?;
            let hard = accuracy_at_step(&blank, test, None)?;
            let soft = accuracy_at_step(&blank, test, Some(leaky_time))?;
            SweepPoint {
                budget,
                granted,
                clamped: budget > granted,
                seed,
                hard_metric: hard,
                soft_metric: soft,
                queries_used: 0,
            }
        } else {
            let slice = &adversary[..granted as usize];
            let run_cfg = ClassificationAttack { seed, ..cfg.clone() };
            let (_, report) =
                extract_classification(oracle, slice, test, leaky_time, &run_cfg)?;
            SweepPoint {
                budget,
                granted,
                clamped: budget > granted,
                seed,
                hard_metric: report.baseline_metric,
                soft_metric: report.final_metric,
                queries_used: report.queries_used,
            }
        };
        points.push(point);
    }
    Ok(points)
}

/// Two rows per point, one for each phase, so the curve can be plotted
/// straight from the file.
pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("budget,seed,phase,accuracy,queries\n");
    for p in points {
        out.push_str(&format!("{},{},hard,{},{}\n", p.granted, p.seed, p.hard_metric, 0));
        out.push_str(&format!(
            "{},{},soft,{},{}\n",
            p.granted, p.seed, p.soft_metric, p.queries_used
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use crate::losses::{LossKind, LossSpec};
    use crate::ndcore::Matrix2;
    use crate::nn::{
        train, AdamState, CellKind, Schedule, SequenceModel, Supervision, TrainConfig, TrainSample,
    };
    use crate::oracle::{OraclePolicy, OutputForm, OutputScope};

    fn toy_samples(seed: u64, n: usize, len: usize) -> Vec<SeqSample> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let inputs: Vec<Matrix2> = (0..len)
                    .map(|t| {
                        let bias = sign * (t + 1) as f64 / len as f64;
                        let v = vec![
                            bias + rng.uniform(-0.3, 0.3),
                            rng.uniform(-0.3, 0.3),
                        ];
                        Matrix2::new(2, 1, v).unwrap()
                    })
                    .collect();
                SeqSample::new(inputs, one_hot(label, 2).unwrap()).unwrap()
            })
            .collect()
    }

    fn toy_oracle() -> Oracle {
        let data = toy_samples(40, 60, 5);
        let mut rng = RngStream::new(13);
        let mut model: SequenceModel =
            init_model(&mut rng, CellKind::Lstm, 2, 8, 2, OutputMode::PerStep).unwrap();
        let mut adam = AdamState::new(&model, 0.01).unwrap();
        let samples: Vec<TrainSample> = data
            .iter()
            .map(|s| TrainSample {
                inputs: s.inputs.clone(),
                target: s.target.clone(),
                teacher: None,
            })
            .collect();
        train(
            &mut model,
            &samples,
            &LossSpec::new(LossKind::HardCe),
            &TrainConfig {
                schedule: Schedule::Epochs(30),
                batch_size: 10,
                supervision: Supervision::AllSteps,
                clip_norm: Some(5.0),
            },
            &mut adam,
            &mut rng,
        )
        .unwrap();
        Oracle::new(
            model,
            OraclePolicy::new(OutputScope::AllTimesteps, OutputForm::Logits),
        )
        .unwrap()
    }

    fn small_cfg(seed: u64) -> ClassificationAttack {
        ClassificationAttack {
            hidden_dim: 6,
            temperature: 4.0,
            hard_epochs: 6,
            soft_epochs: 6,
            batch_size: 8,
            learning_rate: 0.01,
            ..ClassificationAttack::new(seed)
        }
    }

    #[test]
    fn sweep_spends_and_improves_with_budget() {
        let oracle = toy_oracle();
        let adversary = toy_samples(700, 24, 5);
        let test = toy_samples(701, 40, 5);
        let points = classification_budget_sweep(
            &oracle,
            &adversary,
            &test,
            4,
            &[0, 8, 64],
            &small_cfg(2),
        )
        .unwrap();

        assert_eq!(points.len(), 3);
        assert_eq!(points[0].queries_used, 0);
        assert_eq!(points[1].granted, 8);
        assert_eq!(points[1].queries_used, 8);
        assert!(points[2].clamped);
        assert_eq!(points[2].granted, 24);
        assert!(points[2].soft_metric >= points[0].soft_metric);
        assert_ne!(points[1].seed, points[2].seed);
    }

    #[test]
    fn csv_layout() {
        let points = vec![SweepPoint {
            budget: 8,
            granted: 8,
            clamped: false,
            seed: 42,
            hard_metric: 0.5,
            soft_metric: 0.75,
            queries_used: 8,
        }];
        let csv = sweep_to_csv(&points);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "budget,seed,phase,accuracy,queries");
        assert_eq!(lines[1], "8,42,hard,0.5,0");
        assert_eq!(lines[2], "8,42,soft,0.75,8");
    }

    #[test]
    fn unordered_budgets_rejected() {
        let oracle = toy_oracle();
        let data = toy_samples(700, 8, 5);
        let err = classification_budget_sweep(&oracle, &data, &data, 4, &[8, 8], &small_cfg(1))
            .unwrap_err();
        assert!(err.to_string().contains("ascending"));
    }
}
