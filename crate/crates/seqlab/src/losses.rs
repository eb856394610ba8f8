//! Loss functions and their gradients: temperature-softmax cross-entropy
//! (hard and soft targets), L2, smooth L1, the teacher-bounded regression
//! loss, their combination `l_reg`, and a mixed hard/soft objective.
//!
//! Every function returns the loss value together with the gradient with
//! respect to the student-side argument (logits for the classification
//! losses, predictions for the regression losses), so training loops never
//! re-derive chain rules.

use crate::error::{Error, Result};
use crate::ndcore::Matrix2;
use serde::{Deserialize, Serialize};

/// Floor applied inside logarithms so a zero probability at a labeled
/// class produces a large finite loss instead of infinity.
pub const LOG_FLOOR: f64 = 1e-12;

/// Loss value plus the gradient with respect to the student-side input.
/// `clamped` reports whether the log floor fired (hard cross-entropy only).
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix2,
    pub clamped: bool,
}

impl LossGrad {
    fn new(value: f64, grad: Matrix2) -> Self {
        LossGrad {
            value,
            grad,
            clamped: false,
        }
    }
}

/// Which loss a training phase optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    HardCe,
    SoftCeTemp,
    L2,
    SmoothL1,
    LReg,
    MuCombined,
}

/// A loss choice bundled with every hyperparameter the loss family uses:
/// softmax temperature, the teacher-bound margin `m`, the bound weight `v`,
/// and the hard/soft mixing coefficient `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub temperature: f64,
    pub margin: f64,
    pub bound_weight: f64,
    pub hard_mix: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            temperature: 1.0,
            margin: 0.0,
            bound_weight: 1.0,
            hard_mix: 0.5,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn with_bound_weight(mut self, bound_weight: f64) -> Self {
        self.bound_weight = bound_weight;
        self
    }

    pub fn with_hard_mix(mut self, hard_mix: f64) -> Self {
        self.hard_mix = hard_mix;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::invalid(format!(
                "margin must be non-negative, got {}",
                self.margin
            )));
        }
        if !(self.bound_weight >= 0.0) {
            return Err(Error::invalid(format!(
                "bound weight must be non-negative, got {}",
                self.bound_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.hard_mix) {
            return Err(Error::invalid(format!(
                "hard/soft mix must lie in [0,1], got {}",
                self.hard_mix
            )));
        }
        Ok(())
    }

    /// Whether this loss needs a teacher signal alongside the label.
    pub fn needs_teacher(&self) -> bool {
        matches!(
            self.kind,
            LossKind::SoftCeTemp | LossKind::LReg | LossKind::MuCombined
        )
    }

    /// Evaluate the configured loss. `pred` is the student's logits
    /// (classification kinds) or predictions (regression kinds); `target`
    /// is the one-hot label or regression target; `teacher` carries the
    /// oracle's logits or predictions for the kinds that use one.
    pub fn evaluate(
        &self,
        pred: &Matrix2,
        target: &Matrix2,
        teacher: Option<&Matrix2>,
    ) -> Result<LossGrad> {
        self.validate()?;
        fn need(kind: LossKind, t: Option<&Matrix2>) -> Result<&Matrix2> {
            t.ok_or_else(|| Error::invalid(format!("{kind:?} loss needs a teacher signal")))
        }
        match self.kind {
            LossKind::HardCe => {
                let probs = softmax_temp(pred, self.temperature)?;
                cross_entropy_hard(&probs, target, self.temperature)
            }
            LossKind::SoftCeTemp => soft_label_ce(pred, need(self.kind, teacher)?, self.temperature),
            LossKind::L2 => l2_loss(pred, target),
            LossKind::SmoothL1 => smooth_l1(pred, target),
            LossKind::LReg => l_reg(
                pred,
                need(self.kind, teacher)?,
                target,
                self.margin,
                self.bound_weight,
            ),
            LossKind::MuCombined => mu_combined(
                pred,
                need(self.kind, teacher)?,
                target,
                self.hard_mix,
                self.temperature,
            ),
        }
    }
}

fn check_same_shape(a: &Matrix2, b: &Matrix2, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Temperature softmax: entry k is e^{a_k/T} / Σ_i e^{a_i/T}, computed
/// with max-subtraction so large logits cannot overflow. Larger T flattens
/// the distribution without moving its argmax.
pub fn softmax_temp(logits: &Matrix2, temperature: f64) -> Result<Matrix2> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax on empty logits"));
    }
    let max = logits
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|a| ((a - max) / temperature).exp());
    let sum: f64 = out.as_slice().iter().sum();
    out.scale_assign(1.0 / sum);
    Ok(out)
}

fn check_onehot(onehot: &Matrix2) -> Result<()> {
    let mut ones = 0usize;
    for &v in onehot.as_slice() {
        if v == 1.0 {
            ones += 1;
        } else if v != 0.0 {
            return Err(Error::invalid(format!(
                "label vector must be one-hot, found entry {v}"
            )));
        }
    }
    if ones != 1 {
        return Err(Error::invalid(format!(
            "label vector must contain exactly one 1, found {ones}"
        )));
    }
    Ok(())
}

/// Cross-entropy −Σ y_i log p_i against a one-hot label.
///
/// `probs` must already be a temperature-softmax output; the returned
/// gradient is with respect to the logits that produced it, which for a
/// temperature-T softmax is (p − y)/T. Probabilities below [`LOG_FLOOR`]
/// are clamped inside the log and the event is flagged.
pub fn cross_entropy_hard(
    probs: &Matrix2,
    onehot: &Matrix2,
    temperature: f64,
) -> Result<LossGrad> {
    check_same_shape(probs, onehot, "cross_entropy_hard")?;
    check_onehot(onehot)?;
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let sum: f64 = probs.as_slice().iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "probabilities must sum to 1, got {sum}"
        )));
    }
    let mut loss = 0.0;
    let mut clamped = false;
    for (&p, &y) in probs.as_slice().iter().zip(onehot.as_slice()) {
        if y > 0.0 {
            if p < LOG_FLOOR {
                clamped = true;
            }
            loss -= y * p.max(LOG_FLOOR).ln();
        }
    }
    let mut grad = probs.sub(onehot)?;
    grad.scale_assign(1.0 / temperature);
    Ok(LossGrad {
        value: loss,
        grad,
        clamped,
    })
}

/// Distillation cross-entropy between the softened teacher distribution
/// and the softened student distribution, both at temperature T. The
/// gradient with respect to the student logits is (p − q)/T.
pub fn soft_label_ce(
    student_logits: &Matrix2,
    teacher_logits: &Matrix2,
    temperature: f64,
) -> Result<LossGrad> {
    check_same_shape(student_logits, teacher_logits, "soft_label_ce")?;
    let p = softmax_temp(student_logits, temperature)?;
    let q = softmax_temp(teacher_logits, temperature)?;
    let mut loss = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        loss -= qi * pi.max(LOG_FLOOR).ln();
    }
    let mut grad = p.sub(&q)?;
    grad.scale_assign(1.0 / temperature);
    Ok(LossGrad::new(loss, grad))
}

/// Squared L2 norm of (pred − target); gradient 2(pred − target).
pub fn l2_loss(pred: &Matrix2, target: &Matrix2) -> Result<LossGrad> {
    check_same_shape(pred, target, "l2_loss")?;
    let diff = pred.sub(target)?;
    let value = diff.sq_sum();
    Ok(LossGrad::new(value, diff.scaled(2.0)))
}

/// Smooth L1: per coordinate d = pred − target, 0.5·d² when |d| < 1 and
/// |d| − 0.5 otherwise, summed over coordinates. Value and first
/// derivative are both continuous at |d| = 1.
pub fn smooth_l1(pred: &Matrix2, target: &Matrix2) -> Result<LossGrad> {
    check_same_shape(pred, target, "smooth_l1")?;
    let mut value = 0.0;
    let mut grad = Matrix2::zeros(pred.rows(), pred.cols())?;
    for (i, (&p, &t)) in pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .enumerate()
    {
        let d = p - t;
        if d.abs() < 1.0 {
            value += 0.5 * d * d;
            grad.as_mut_slice()[i] = d;
        } else {
            value += d.abs() - 0.5;
            grad.as_mut_slice()[i] = d.signum();
        }
    }
    Ok(LossGrad::new(value, grad))
}

/// Teacher-bounded regression loss: ‖R_s − y‖² while the student has not
/// beaten the teacher's error by the margin m, zero afterwards. The branch
/// condition ‖R_s − y‖² + m > ‖R_t − y‖² uses strict ">", so ties take the
/// zero branch; the condition itself is treated as non-differentiable
/// gating and the gradient is 2(R_s − y) only in the active branch.
pub fn teacher_bound_lb(
    student_pred: &Matrix2,
    teacher_pred: &Matrix2,
    target: &Matrix2,
    margin: f64,
) -> Result<LossGrad> {
    check_same_shape(student_pred, target, "teacher_bound_lb")?;
    check_same_shape(teacher_pred, target, "teacher_bound_lb")?;
    if !(margin >= 0.0) {
        return Err(Error::invalid(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    let student_diff = student_pred.sub(target)?;
    let student_err = student_diff.sq_sum();
    let teacher_err = teacher_pred.sub(target)?.sq_sum();
    if student_err + margin > teacher_err {
        Ok(LossGrad::new(student_err, student_diff.scaled(2.0)))
    } else {
        Ok(LossGrad::new(
            0.0,
            Matrix2::zeros(student_pred.rows(), student_pred.cols())?,
        ))
    }
}

/// Combined regression objective: smooth_l1(R_s, y) + v·L_b(R_s, R_t, y, m).
pub fn l_reg(
    student_pred: &Matrix2,
    teacher_pred: &Matrix2,
    target: &Matrix2,
    margin: f64,
    bound_weight: f64,
) -> Result<LossGrad> {
    if !(bound_weight >= 0.0) {
        return Err(Error::invalid(format!(
            "bound weight must be non-negative, got {bound_weight}"
        )));
    }
    let base = smooth_l1(student_pred, target)?;
    let bound = teacher_bound_lb(student_pred, teacher_pred, target, margin)?;
    let mut grad = base.grad;
    grad.axpy_assign(bound_weight, &bound.grad)?;
    Ok(LossGrad::new(
        base.value + bound_weight * bound.value,
        grad,
    ))
}

/// Mixed objective: mu·hard cross-entropy (plain softmax) plus
/// (1 − mu)·soft distillation cross-entropy at temperature T.
pub fn mu_combined(
    student_logits: &Matrix2,
    teacher_logits: &Matrix2,
    onehot: &Matrix2,
    hard_mix: f64,
    temperature: f64,
) -> Result<LossGrad> {
    if !(0.0..=1.0).contains(&hard_mix) {
        return Err(Error::invalid(format!(
            "hard/soft mix must lie in [0,1], got {hard_mix}"
        )));
    }
    let probs = softmax_temp(student_logits, 1.0)?;
    let hard = cross_entropy_hard(&probs, onehot, 1.0)?;
    let soft = soft_label_ce(student_logits, teacher_logits, temperature)?;
    let mut grad = hard.grad.scaled(hard_mix);
    grad.axpy_assign(1.0 - hard_mix, &soft.grad)?;
    Ok(LossGrad {
        value: hard_mix * hard.value + (1.0 - hard_mix) * soft.value,
        grad,
        clamped: hard.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Matrix2 {
        Matrix2::column(values).unwrap()
    }

    /// Central finite differences of a scalar function of one matrix.
    fn fd_grad(f: impl Fn(&Matrix2) -> f64, x: &Matrix2, h: f64) -> Matrix2 {
        let mut grad = Matrix2::zeros(x.rows(), x.cols()).unwrap();
        for i in 0..x.len() {
            let mut hi = x.clone();
            hi.as_mut_slice()[i] += h;
            let mut lo = x.clone();
            lo.as_mut_slice()[i] -= h;
            grad.as_mut_slice()[i] = (f(&hi) - f(&lo)) / (2.0 * h);
        }
        grad
    }

    fn assert_grad_close(analytic: &Matrix2, numeric: &Matrix2, tol: f64) {
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let denom = (a.abs() + n.abs()).max(1e-8);
            assert!(
                (a - n).abs() / denom < tol,
                "gradient mismatch: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        for temp in [1.0, 4.0, 16.0] {
            let p = softmax_temp(&col(&[3.2, 3.2, 3.2]), temp).unwrap();
            for &v in p.as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_t1_matches_plain_softmax() {
        // Independent plain softmax written out in the test.
        let logits = col(&[0.3, -1.2, 2.0, 0.0, 5.5]);
        let exps: Vec<f64> = logits.as_slice().iter().map(|a| a.exp()).collect();
        let sum: f64 = exps.iter().sum();
        let p = softmax_temp(&logits, 1.0).unwrap();
        for (got, want) in p.as_slice().iter().zip(exps.iter().map(|e| e / sum)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_reference_value_at_t16() {
        // Frozen against an independent high-precision evaluation of
        // e^{a_k/16} / Σ e^{a_i/16} for logits [2, 1].
        let p = softmax_temp(&col(&[2.0, 1.0]), 16.0).unwrap();
        assert!((p.get(0, 0) - 0.51562).abs() < 1e-4);
        assert!((p.get(1, 0) - 0.48438).abs() < 1e-4);
    }

    #[test]
    fn softmax_handles_huge_logits() {
        let p = softmax_temp(&col(&[1000.0, 999.0]), 1.0).unwrap();
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax_temp(&col(&[1.0]), 0.0).is_err());
        assert!(softmax_temp(&col(&[1.0]), -2.0).is_err());
    }

    #[test]
    fn hard_ce_exact_label_is_zero() {
        let p = col(&[0.0, 1.0, 0.0]);
        let y = col(&[0.0, 1.0, 0.0]);
        let out = cross_entropy_hard(&p, &y, 1.0).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn hard_ce_uniform_is_log_n() {
        for n in [2usize, 5, 10] {
            let p = Matrix2::filled(n, 1, 1.0 / n as f64).unwrap();
            let mut y = Matrix2::zeros(n, 1).unwrap();
            y.set(0, 0, 1.0);
            let out = cross_entropy_hard(&p, &y, 1.0).unwrap();
            assert!((out.value - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_ce_reference_value() {
        // −ln 0.7, frozen from an independent evaluation.
        let out = cross_entropy_hard(&col(&[0.7, 0.3]), &col(&[1.0, 0.0]), 1.0).unwrap();
        assert!((out.value - 0.35667).abs() < 1e-4);
        assert!(!out.clamped);
    }

    #[test]
    fn hard_ce_clamps_zero_probability() {
        let out = cross_entropy_hard(&col(&[1.0, 0.0]), &col(&[0.0, 1.0]), 1.0).unwrap();
        assert!(out.clamped);
        assert!((out.value - (-LOG_FLOOR.ln())).abs() < 1e-9);
        assert!(out.value.is_finite());
    }

    #[test]
    fn hard_ce_rejects_non_onehot_and_non_probability() {
        let p = col(&[0.5, 0.5]);
        assert!(cross_entropy_hard(&p, &col(&[0.5, 0.5]), 1.0).is_err());
        assert!(cross_entropy_hard(&p, &col(&[1.0, 1.0]), 1.0).is_err());
        assert!(cross_entropy_hard(&col(&[0.9, 0.3]), &col(&[1.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn hard_ce_gradient_matches_finite_differences() {
        let logits = col(&[0.4, -0.9, 1.3, 0.2]);
        let y = col(&[0.0, 0.0, 1.0, 0.0]);
        for temp in [1.0, 4.0, 16.0] {
            let probs = softmax_temp(&logits, temp).unwrap();
            let out = cross_entropy_hard(&probs, &y, temp).unwrap();
            let numeric = fd_grad(
                |a| {
                    let p = softmax_temp(a, temp).unwrap();
                    cross_entropy_hard(&p, &y, temp).unwrap().value
                },
                &logits,
                1e-5,
            );
            assert_grad_close(&out.grad, &numeric, 1e-4);
        }
    }

    #[test]
    fn soft_ce_fixed_point_has_zero_gradient() {
        let logits = col(&[1.0, -0.5, 0.25]);
        let out = soft_label_ce(&logits, &logits, 4.0).unwrap();
        // Loss equals the entropy of the softened distribution.
        let q = softmax_temp(&logits, 4.0).unwrap();
        let entropy: f64 = q.as_slice().iter().map(|&p| -p * p.ln()).sum();
        assert!((out.value - entropy).abs() < 1e-12);
        assert!(out.grad.as_slice().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn soft_ce_large_t_approaches_uniform_target() {
        let student = col(&[2.0, -1.0, 0.5]);
        let teacher = col(&[-3.0, 4.0, 0.0]);
        let out = soft_label_ce(&student, &teacher, 1e6).unwrap();
        assert!((out.value - 3f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn soft_ce_gradient_matches_finite_differences() {
        let student = col(&[0.2, 1.4, -0.7, 0.0]);
        let teacher = col(&[1.0, 0.3, -0.2, 2.2]);
        for temp in [1.0, 4.0, 16.0] {
            let out = soft_label_ce(&student, &teacher, temp).unwrap();
            let numeric = fd_grad(
                |s| soft_label_ce(s, &teacher, temp).unwrap().value,
                &student,
                1e-5,
            );
            assert_grad_close(&out.grad, &numeric, 1e-4);
        }
    }

    #[test]
    fn l2_examples() {
        let zero = l2_loss(&col(&[1.0, 2.0]), &col(&[1.0, 2.0])).unwrap();
        assert_eq!(zero.value, 0.0);
        let unit = l2_loss(&col(&[1.0, 0.0]), &col(&[0.0, 0.0])).unwrap();
        assert_eq!(unit.value, 1.0);
        let single = l2_loss(&col(&[1.5]), &col(&[0.5])).unwrap();
        let doubled = l2_loss(&col(&[2.5]), &col(&[0.5])).unwrap();
        assert!((doubled.value - 4.0 * single.value).abs() < 1e-12);
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let pred = col(&[0.3, -1.1, 2.0]);
        let target = col(&[0.0, 0.4, 1.5]);
        let out = l2_loss(&pred, &target).unwrap();
        let numeric = fd_grad(|p| l2_loss(p, &target).unwrap().value, &pred, 1e-5);
        assert_grad_close(&out.grad, &numeric, 1e-4);
    }

    #[test]
    fn smooth_l1_piecewise_values() {
        let at = |d: f64| smooth_l1(&col(&[d]), &col(&[0.0])).unwrap();
        assert_eq!(at(0.0).value, 0.0);
        assert!((at(1.0).value - 0.5).abs() < 1e-15);
        assert!((at(-1.0).value - 0.5).abs() < 1e-15);
        assert!((at(3.0).value - 2.5).abs() < 1e-15);
        assert!((at(0.5).value - 0.125).abs() < 1e-15);
        // Coordinates sum.
        let v = smooth_l1(&col(&[3.0, 0.5]), &col(&[0.0, 0.0])).unwrap();
        assert!((v.value - 2.625).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_is_smooth_at_the_kink() {
        let eps = 1e-10;
        for sign in [-1.0, 1.0] {
            for side in [-eps, eps] {
                let out = smooth_l1(&col(&[sign * (1.0 + side)]), &col(&[0.0])).unwrap();
                assert!((out.value - 0.5).abs() <= 1e-9);
                assert!((out.grad.get(0, 0) - sign).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn smooth_l1_gradient_matches_finite_differences() {
        // Points away from the |d| = 1 kink.
        let pred = col(&[0.3, -2.4, 1.6, 0.0]);
        let target = col(&[0.1, 0.0, 0.0, 0.5]);
        let out = smooth_l1(&pred, &target).unwrap();
        let numeric = fd_grad(|p| smooth_l1(p, &target).unwrap().value, &pred, 1e-5);
        assert_grad_close(&out.grad, &numeric, 1e-4);
    }

    #[test]
    fn teacher_bound_examples() {
        // Active branch: 4 + 1 > 0.
        let a = teacher_bound_lb(&col(&[2.0]), &col(&[0.0]), &col(&[0.0]), 1.0).unwrap();
        assert_eq!(a.value, 4.0);
        assert_eq!(a.grad.get(0, 0), 4.0);
        // Inactive branch: 0.01 > 9 is false.
        let b = teacher_bound_lb(&col(&[0.1]), &col(&[3.0]), &col(&[0.0]), 0.0).unwrap();
        assert_eq!(b.value, 0.0);
        assert_eq!(b.grad.get(0, 0), 0.0);
        // Active branch with zero residual.
        let c = teacher_bound_lb(&col(&[0.0]), &col(&[3.0]), &col(&[0.0]), 10.0).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn teacher_bound_tie_takes_zero_branch() {
        // ‖R_s − y‖² + m == ‖R_t − y‖² exactly: strict ">" fails.
        let out = teacher_bound_lb(&col(&[1.0]), &col(&[2.0]), &col(&[0.0]), 3.0).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn teacher_bound_is_piecewise_exact() {
        // On random inputs the value is exactly 0 or exactly ‖R_s − y‖².
        let mut rng = crate::ndcore::RngStream::new(77);
        for _ in 0..1000 {
            let dim = 1 + rng.below(6) as usize;
            let rs = Matrix2::rand_uniform(&mut rng, dim, 1, -3.0, 3.0).unwrap();
            let rt = Matrix2::rand_uniform(&mut rng, dim, 1, -3.0, 3.0).unwrap();
            let y = Matrix2::rand_uniform(&mut rng, dim, 1, -3.0, 3.0).unwrap();
            let m = rng.uniform(0.0, 10.0);
            let out = teacher_bound_lb(&rs, &rt, &y, m).unwrap();
            let s_err = rs.sub(&y).unwrap().sq_sum();
            let t_err = rt.sub(&y).unwrap().sq_sum();
            let expect = if s_err + m > t_err { s_err } else { 0.0 };
            assert_eq!(out.value, expect);
        }
    }

    #[test]
    fn l_reg_with_zero_bound_weight_is_smooth_l1() {
        let mut rng = crate::ndcore::RngStream::new(3);
        for _ in 0..50 {
            let rs = Matrix2::rand_uniform(&mut rng, 4, 1, -2.0, 2.0).unwrap();
            let rt = Matrix2::rand_uniform(&mut rng, 4, 1, -2.0, 2.0).unwrap();
            let y = Matrix2::rand_uniform(&mut rng, 4, 1, -2.0, 2.0).unwrap();
            let combined = l_reg(&rs, &rt, &y, 5.0, 0.0).unwrap();
            let plain = smooth_l1(&rs, &y).unwrap();
            assert_eq!(combined.value, plain.value);
            assert_eq!(combined.grad, plain.grad);
        }
    }

    #[test]
    fn l_reg_reference_value() {
        // smooth_l1 = 2 − 0.5 = 1.5; bound active with value 4; total 5.5.
        let out = l_reg(&col(&[2.0]), &col(&[0.0]), &col(&[0.0]), 0.0, 1.0).unwrap();
        assert!((out.value - 5.5).abs() < 1e-15);
    }

    #[test]
    fn l_reg_gradient_matches_finite_differences() {
        // Away from the |d| = 1 kink and the branch boundary.
        let rs = col(&[2.0, -0.3, 0.4]);
        let rt = col(&[0.5, 0.5, 0.5]);
        let y = col(&[0.0, 0.0, 0.0]);
        for (m, v) in [(0.0, 1.0), (1.0, 0.5), (5.0, 2.0)] {
            let out = l_reg(&rs, &rt, &y, m, v).unwrap();
            let numeric = fd_grad(|p| l_reg(p, &rt, &y, m, v).unwrap().value, &rs, 1e-6);
            assert_grad_close(&out.grad, &numeric, 1e-4);
        }
    }

    #[test]
    fn mu_combined_reduces_to_pure_losses_at_extremes() {
        let student = col(&[0.5, -1.0, 2.0]);
        let teacher = col(&[1.5, 0.0, 0.3]);
        let y = col(&[0.0, 0.0, 1.0]);
        let temp = 4.0;

        let hard_only = mu_combined(&student, &teacher, &y, 1.0, temp).unwrap();
        let probs = softmax_temp(&student, 1.0).unwrap();
        let hard = cross_entropy_hard(&probs, &y, 1.0).unwrap();
        assert!((hard_only.value - hard.value).abs() < 1e-15);
        assert_eq!(hard_only.grad, hard.grad);

        let soft_only = mu_combined(&student, &teacher, &y, 0.0, temp).unwrap();
        let soft = soft_label_ce(&student, &teacher, temp).unwrap();
        assert!((soft_only.value - soft.value).abs() < 1e-15);

        let mixed = mu_combined(&student, &teacher, &y, 0.5, temp).unwrap();
        assert!((mixed.value - 0.5 * (hard.value + soft.value)).abs() < 1e-12);
    }

    #[test]
    fn mu_combined_gradient_matches_finite_differences() {
        let student = col(&[0.1, 0.8, -0.4]);
        let teacher = col(&[1.0, -1.0, 0.0]);
        let y = col(&[1.0, 0.0, 0.0]);
        let out = mu_combined(&student, &teacher, &y, 0.3, 16.0).unwrap();
        let numeric = fd_grad(
            |s| mu_combined(s, &teacher, &y, 0.3, 16.0).unwrap().value,
            &student,
            1e-5,
        );
        assert_grad_close(&out.grad, &numeric, 1e-4);
    }

    #[test]
    fn loss_spec_validation() {
        assert!(LossSpec::new(LossKind::HardCe).validate().is_ok());
        assert!(LossSpec::new(LossKind::HardCe)
            .with_temperature(0.0)
            .validate()
            .is_err());
        assert!(LossSpec::new(LossKind::LReg)
            .with_margin(-1.0)
            .validate()
            .is_err());
        assert!(LossSpec::new(LossKind::MuCombined)
            .with_hard_mix(1.5)
            .validate()
            .is_err());
    }

    #[test]
    fn loss_spec_dispatch_requires_teacher_where_needed() {
        let pred = col(&[0.1, 0.9]);
        let target = col(&[0.0, 1.0]);
        let spec = LossSpec::new(LossKind::SoftCeTemp).with_temperature(4.0);
        assert!(spec.evaluate(&pred, &target, None).is_err());
        assert!(spec.evaluate(&pred, &target, Some(&pred)).is_ok());
    }
}
