//! Fast structural checks over the numeric core: gradient agreement,
//! softmax and loss identities, metric recomputation, determinism, query
//! accounting, and checkpoint fidelity. The whole suite is sized to finish
//! well under a minute on one core.

use std::io::{BufRead, BufReader, Write as IoWrite};
use std::net::TcpStream;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gradcheck::standard_check;
use crate::losses::{
    smooth_l1, softmax_temp, teacher_bound_lb, LossKind, LossSpec,
};
use crate::metrics::r_squared;
use crate::ndcore::{Matrix2, RngStream};
use crate::nn::{
    init_model, load_checkpoint, param_digest, save_checkpoint, AdamState, CellKind, Gradients,
    OutputMode, Supervision,
};
use crate::oracle::{wire, Oracle, OraclePolicy, OutputForm, OutputScope};

pub const GRAD_TOL: f64 = 1e-4;
pub const SOFTMAX_SUM_TOL: f64 = 1e-12;
pub const KINK_TOL: f64 = 1e-9;
pub const R2_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SelfTestReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed).collect()
    }
}

fn run_check(name: &'static str, body: impl FnOnce() -> Result<String>) -> CheckOutcome {
    match body() {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fail(msg: String) -> Error {
    Error::invalid(msg)
}

/// Backpropagation against central finite differences for every cell,
/// readout mode, and loss the trainers use, at relative tolerance 1e-4.
pub fn check_gradients(seed: u64) -> Result<String> {
    let hard = LossSpec::new(LossKind::HardCe);
    let soft = LossSpec::new(LossKind::SoftCeTemp).with_temperature(16.0);
    let l2 = LossSpec::new(LossKind::L2);
    let sl1 = LossSpec::new(LossKind::SmoothL1);
    let lreg = LossSpec::new(LossKind::LReg)
        .with_margin(1.0)
        .with_bound_weight(1.0);
    let mixed = LossSpec::new(LossKind::MuCombined)
        .with_hard_mix(0.5)
        .with_temperature(4.0);

    let mut worst = 0.0f64;
    let mut worst_at = String::from("none");
    let mut cases = 0usize;
    let mut entries = 0usize;
    for cell in [CellKind::Rnn, CellKind::Lstm] {
        let shapes = [
            (OutputMode::PerStep, Supervision::AllSteps),
            (OutputMode::PerStep, Supervision::AtStep(1)),
            (OutputMode::FinalOnly, Supervision::FinalStep),
        ];
        for (i, &(mode, supervision)) in shapes.iter().enumerate() {
            for (j, loss) in [&hard, &soft, &l2, &sl1, &lreg, &mixed].iter().enumerate() {
                let report =
                    standard_check(cell, mode, supervision, loss, seed + (i * 7 + j) as u64)?;
                cases += 1;
                entries += report.entries_checked;
                if report.max_rel_err > worst {
                    worst = report.max_rel_err;
                    worst_at = format!(
                        "{cell:?}/{mode:?}/{supervision:?}/{:?} at {}",
                        loss.kind, report.worst_param
                    );
                }
            }
        }
    }
    if worst >= GRAD_TOL {
        return Err(fail(format!(
            "gradient mismatch {worst:.3e} (tolerance {GRAD_TOL:.0e}) in {worst_at}"
        )));
    }
    Ok(format!(
        "{cases} configurations, {entries} parameter entries, worst relative error {worst:.3e}"
    ))
}

/// Temperature-softmax identities on 100 random logit vectors: unit sum,
/// T = 1 equals the plain definition, argmax unchanged at T in {1, 4, 16},
/// and the winning probability never grows as T rises.
pub fn check_softmax_invariants(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let temps = [1.0, 4.0, 16.0];
    for case in 0..100 {
        let dim = 2 + rng.below(9) as usize;
        let logits = Matrix2::rand_uniform(&mut rng, dim, 1, -30.0, 30.0)?;
        let base_argmax = logits.argmax();

        let plain = {
            let max = logits
                .as_slice()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.as_slice().iter().map(|a| (a - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect::<Vec<f64>>()
        };

        let mut prev_top = f64::INFINITY;
        for &t in &temps {
            let p = softmax_temp(&logits, t)?;
            let sum: f64 = p.as_slice().iter().sum();
            if (sum - 1.0).abs() > SOFTMAX_SUM_TOL {
                return Err(fail(format!(
                    "case {case}: probabilities at T={t} sum to {sum:.17}"
                )));
            }
            if p.argmax() != base_argmax {
                return Err(fail(format!(
                    "case {case}: argmax moved from {base_argmax} to {} at T={t}",
                    p.argmax()
                )));
            }
            let top = p.as_slice()[base_argmax];
            if top > prev_top + SOFTMAX_SUM_TOL {
                return Err(fail(format!(
                    "case {case}: top probability rose from {prev_top} to {top} at T={t}"
                )));
            }
            prev_top = top;
            if t == 1.0 {
                for (k, (&a, &b)) in p.as_slice().iter().zip(&plain).enumerate() {
                    if (a - b).abs() > SOFTMAX_SUM_TOL {
                        return Err(fail(format!(
                            "case {case}: T=1 entry {k} is {a}, plain softmax gives {b}"
                        )));
                    }
                }
            }
        }
    }
    Ok("100 random logit vectors at T in {1, 4, 16}".to_string())
}

/// The teacher-bound term against a direct recomputation on 1,000 random
/// cases: value and gradient must match exactly, including the tie case.
pub fn check_teacher_bound(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let margins = [0.0, 1.0, 5.0, 10.0];
    for case in 0..1000 {
        let dim = 1 + rng.below(6) as usize;
        let student = Matrix2::rand_uniform(&mut rng, dim, 1, -2.0, 2.0)?;
        let teacher = Matrix2::rand_uniform(&mut rng, dim, 1, -2.0, 2.0)?;
        let target = Matrix2::rand_uniform(&mut rng, dim, 1, -2.0, 2.0)?;
        let margin = if case % 5 == 4 {
            rng.uniform(0.0, 10.0)
        } else {
            margins[case % 4]
        };

        let got = teacher_bound_lb(&student, &teacher, &target, margin)?;
        let mut student_err = 0.0;
        let mut teacher_err = 0.0;
        for i in 0..dim {
            let ds = student.as_slice()[i] - target.as_slice()[i];
            let dt = teacher.as_slice()[i] - target.as_slice()[i];
            student_err += ds * ds;
            teacher_err += dt * dt;
        }
        let active = student_err + margin > teacher_err;
        let want_value = if active { student_err } else { 0.0 };
        if got.value != want_value {
            return Err(fail(format!(
                "case {case}: value {} but recomputation gives {want_value}",
                got.value
            )));
        }
        for i in 0..dim {
            let want_g = if active {
                2.0 * (student.as_slice()[i] - target.as_slice()[i])
            } else {
                0.0
            };
            if got.grad.as_slice()[i] != want_g {
                return Err(fail(format!(
                    "case {case}: gradient entry {i} is {} but recomputation gives {want_g}",
                    got.grad.as_slice()[i]
                )));
            }
        }
    }

    let s = Matrix2::column(&[1.0])?;
    let y = Matrix2::column(&[0.0])?;
    let teacher_tie = Matrix2::column(&[2.0])?;
    let tie = teacher_bound_lb(&s, &teacher_tie, &y, 3.0)?;
    if tie.value != 0.0 {
        return Err(fail(format!(
            "exact tie must take the zero branch, got {}",
            tie.value
        )));
    }
    Ok("1,000 random cases plus the exact-tie branch".to_string())
}

/// Value and slope continuity of the smooth L1 loss across |d| = 1.
pub fn check_smooth_l1_kink() -> Result<String> {
    let eps = 1e-10;
    let target = Matrix2::column(&[0.0])?;
    for sign in [1.0, -1.0] {
        let below = smooth_l1(&Matrix2::column(&[sign * (1.0 - eps)])?, &target)?;
        let above = smooth_l1(&Matrix2::column(&[sign * (1.0 + eps)])?, &target)?;
        let value_jump = (below.value - above.value).abs();
        let slope_jump = (below.grad.as_slice()[0] - above.grad.as_slice()[0]).abs();
        if value_jump > KINK_TOL || slope_jump > KINK_TOL {
            return Err(fail(format!(
                "discontinuity near d = {sign}: value jump {value_jump:.3e}, slope jump {slope_jump:.3e}"
            )));
        }
    }
    Ok(format!("value and slope jumps below {KINK_TOL:.0e} at both kinks"))
}

/// The coefficient of determination against an independent recomputation,
/// and the exact identity on perfect predictions.
pub fn check_r_squared(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let n = 20;
    let f = 3;
    let targets: Vec<Matrix2> = (0..n)
        .map(|_| Matrix2::rand_uniform(&mut rng, f, 1, -3.0, 3.0))
        .collect::<Result<_>>()?;
    let preds: Vec<Matrix2> = targets
        .iter()
        .map(|t| {
            let noise = Matrix2::rand_uniform(&mut rng, f, 1, -0.5, 0.5)?;
            t.add(&noise)
        })
        .collect::<Result<_>>()?;
    let got = r_squared(&targets, &preds)?;

    let mut reference = Vec::with_capacity(f);
    for k in 0..f {
        let mean: f64 = targets.iter().map(|t| t.as_slice()[k]).sum::<f64>() / n as f64;
        let ss_tot: f64 = targets
            .iter()
            .map(|t| (t.as_slice()[k] - mean).powi(2))
            .sum();
        let ss_res: f64 = targets
            .iter()
            .zip(&preds)
            .map(|(t, p)| (t.as_slice()[k] - p.as_slice()[k]).powi(2))
            .sum();
        reference.push(1.0 - ss_res / ss_tot);
    }
    let ref_mean = reference.iter().sum::<f64>() / f as f64;
    if (got.mean - ref_mean).abs() > R2_TOL {
        return Err(fail(format!(
            "mean R² {} differs from recomputation {ref_mean}",
            got.mean
        )));
    }
    for (k, (&a, &b)) in got.per_feature.iter().zip(&reference).enumerate() {
        if (a - b).abs() > R2_TOL {
            return Err(fail(format!(
                "feature {k}: R² {a} differs from recomputation {b}"
            )));
        }
    }

    let perfect = r_squared(&targets, &targets)?;
    if perfect.mean != 1.0 || perfect.per_feature.iter().any(|&v| v != 1.0) {
        return Err(fail(format!(
            "perfect predictions must score exactly 1, got mean {}",
            perfect.mean
        )));
    }
    Ok(format!(
        "recomputation within {R2_TOL:.0e} on {n} samples, perfect score exact"
    ))
}

/// Seeded streams replay exactly, derived streams disagree with their
/// parents, and shuffles are reproducible.
pub fn check_rng_determinism(seed: u64) -> Result<String> {
    let a: Vec<u64> = {
        let mut r = RngStream::new(seed);
        (0..64).map(|_| r.next_u64()).collect()
    };
    let b: Vec<u64> = {
        let mut r = RngStream::new(seed);
        (0..64).map(|_| r.next_u64()).collect()
    };
    if a != b {
        return Err(fail("same seed produced different streams".to_string()));
    }
    let mut derived = RngStream::new(seed).derive(1);
    let first = derived.next_u64();
    if first == a[0] {
        return Err(fail(
            "derived stream repeated its parent's first draw".to_string(),
        ));
    }
    let mut v1: Vec<usize> = (0..100).collect();
    let mut v2 = v1.clone();
    RngStream::new(seed).shuffle(&mut v1);
    RngStream::new(seed).shuffle(&mut v2);
    if v1 != v2 {
        return Err(fail("seeded shuffle was not reproducible".to_string()));
    }
    let mut sorted = v1.clone();
    sorted.sort_unstable();
    if sorted != (0..100).collect::<Vec<_>>() {
        return Err(fail("shuffle lost or duplicated elements".to_string()));
    }
    Ok("replay, derivation, and shuffle all behave".to_string())
}

/// One optimizer step on a fresh model: the first bias-corrected update
/// must move every parameter by at most the learning rate, and in the
/// direction opposite its gradient.
pub fn check_adam_step(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let mut model = init_model(&mut rng, CellKind::Rnn, 2, 3, 2, OutputMode::PerStep)?;
    let before: Vec<Vec<f64>> = model
        .param_vec()
        .iter()
        .map(|m| m.as_slice().to_vec())
        .collect();

    let mut grads = Gradients::zeros_like(&model)?;
    for g in grads.param_vec_mut() {
        for v in g.as_mut_slice() {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
    let grad_copy: Vec<Vec<f64>> = grads
        .param_vec()
        .iter()
        .map(|m| m.as_slice().to_vec())
        .collect();

    let lr = 0.01;
    let mut adam = AdamState::new(&model, lr)?;
    adam.apply(&mut model, &grads)?;

    for (p, (now, (was, g))) in model
        .param_vec()
        .iter()
        .zip(before.iter().zip(&grad_copy))
        .enumerate()
    {
        for (i, ((&n, &w), &gv)) in now
            .as_slice()
            .iter()
            .zip(was)
            .zip(g)
            .enumerate()
        {
            let step = n - w;
            if step.abs() > lr * 1.01 {
                return Err(fail(format!(
                    "param {p}[{i}] moved {step:.3e}, more than the learning rate"
                )));
            }
            if gv.abs() > 1e-9 && step * gv > 0.0 {
                return Err(fail(format!(
                    "param {p}[{i}] moved with its gradient instead of against it"
                )));
            }
        }
    }
    Ok("first update bounded by the learning rate and descent-directed".to_string())
}

/// Query accounting: every accepted submission charges once, malformed
/// submissions charge nothing, and the budget cuts off exactly on time.
pub fn check_query_ledger(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let model = init_model(&mut rng, CellKind::Rnn, 2, 3, 2, OutputMode::PerStep)?;
    let oracle = Oracle::new(
        model,
        OraclePolicy::new(OutputScope::AllTimesteps, OutputForm::Logits).with_budget(3),
    )?;
    let seq = vec![Matrix2::column(&[0.1, -0.2])?; 4];

    oracle.query(&seq)?;
    if oracle.query(&[]).is_ok() {
        return Err(fail("empty sequence was accepted".to_string()));
    }
    if oracle.ledger().total() != 1 {
        return Err(fail(format!(
            "rejected query changed the ledger to {}",
            oracle.ledger().total()
        )));
    }
    oracle.query(&seq)?;
    oracle.query(&seq)?;
    match oracle.query(&seq) {
        Err(Error::BudgetExhausted { budget: 3 }) => {}
        other => {
            return Err(fail(format!(
                "fourth query past a budget of 3 gave {other:?}"
            )))
        }
    }
    if oracle.ledger().total() != 3 {
        return Err(fail(format!(
            "ledger reads {} after 3 accepted queries",
            oracle.ledger().total()
        )));
    }
    Ok("charges per accepted submission, free rejections, exact cutoff".to_string())
}

/// Save and reload a model byte-for-byte, verified by parameter digest.
pub fn check_checkpoint_roundtrip(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let model = init_model(&mut rng, CellKind::Lstm, 3, 5, 2, OutputMode::FinalOnly)?;
    let path = std::env::temp_dir().join(format!(
        "seqlab-selftest-{}-{seed}.json",
        std::process::id()
    ));
    let result = (|| -> Result<String> {
        save_checkpoint(&model, &path)?;
        let restored = load_checkpoint(&path)?;
        if param_digest(&restored) != param_digest(&model) {
            return Err(fail("reloaded parameters differ from the original".to_string()));
        }
        if restored.output_mode != model.output_mode {
            return Err(fail("reloaded readout mode differs".to_string()));
        }
        Ok("digest identical after save and reload".to_string())
    })();
    let _ = std::fs::remove_file(&path);
    result
}

/// A live round trip through the line protocol: one well-formed request
/// answered, one malformed request refused without charge.
pub fn check_wire_roundtrip(seed: u64) -> Result<String> {
    let mut rng = RngStream::new(seed);
    let model = init_model(&mut rng, CellKind::Rnn, 2, 3, 2, OutputMode::PerStep)?;
    let oracle = Arc::new(Oracle::new(
        model,
        OraclePolicy::new(OutputScope::AllTimesteps, OutputForm::Logits),
    )?);
    let server = wire::serve(Arc::clone(&oracle), "127.0.0.1:0")?;
    let result = (|| -> Result<String> {
        let mut stream = TcpStream::connect(server.addr())?;
        stream.write_all(b"{\"id\": 1, \"seq\": [[0.1, -0.2], [0.3, 0.4]]}\n")?;
        stream.write_all(b"this is not json\n")?;
        stream.flush()?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let ok: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| fail(format!("unparseable reply: {e}")))?;
        if ok["id"] != 1 || ok["outputs"].as_array().map(|a| a.len()) != Some(2) {
            return Err(fail(format!("unexpected reply {}", line.trim())));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let err: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| fail(format!("unparseable error reply: {e}")))?;
        if err["error"].is_null() {
            return Err(fail("malformed request did not yield an error".to_string()));
        }
        if oracle.ledger().total() != 1 {
            return Err(fail(format!(
                "ledger reads {} after one good and one bad request",
                oracle.ledger().total()
            )));
        }
        Ok("request answered, garbage refused, one charge".to_string())
    })();
    server.shutdown();
    result
}

/// Runs every check and collects the outcomes in a fixed order.
pub fn run_all(seed: u64) -> SelfTestReport {
    let outcomes = vec![
        run_check("gradients", || check_gradients(seed)),
        run_check("softmax_invariants", || check_softmax_invariants(seed + 1)),
        run_check("teacher_bound", || check_teacher_bound(seed + 2)),
        run_check("smooth_l1_kink", check_smooth_l1_kink),
        run_check("r_squared", || check_r_squared(seed + 3)),
        run_check("rng_determinism", || check_rng_determinism(seed + 4)),
        run_check("adam_step", || check_adam_step(seed + 5)),
        run_check("query_ledger", || check_query_ledger(seed + 6)),
        run_check("checkpoint_roundtrip", || check_checkpoint_roundtrip(seed + 7)),
        run_check("wire_roundtrip", || check_wire_roundtrip(seed + 8)),
    ];
    SelfTestReport { outcomes }
}
