use crate::error::{Error, Result};
use crate::ndcore::Matrix2;
use crate::nn::bptt::Gradients;
use crate::nn::model::SequenceModel;

/// Adam optimizer state: first and second moment accumulators mirroring
/// the model's parameter shapes, plus the step counter used for bias
/// correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix2>,
    v: Vec<Matrix2>,
}

impl AdamState {
    /// Standard hyperparameters: β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(model: &SequenceModel, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let zeros: Result<Vec<Matrix2>> = model
            .param_vec()
            .iter()
            .map(|p| Matrix2::zeros(p.rows(), p.cols()))
            .collect();
        let m = zeros?;
        let v = m.clone();
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        })
    }

    /// One Adam update with bias correction applied to both moments.
    pub fn apply(&mut self, model: &mut SequenceModel, grads: &Gradients) -> Result<()> {
        let gvec = grads.param_vec();
        let mut pvec = model.param_vec_mut();
        if gvec.len() != pvec.len() || gvec.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer state tracks {} parameters, model has {}, gradients have {}",
                self.m.len(),
                pvec.len(),
                gvec.len()
            )));
        }
        for ((p, g), (m, v)) in pvec.iter().zip(&gvec).zip(self.m.iter().zip(&self.v)) {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);

        for (idx, p) in pvec.iter_mut().enumerate() {
            let g = gvec[idx].as_slice();
            let m = self.m[idx].as_mut_slice();
            let v = self.v[idx].as_mut_slice();
            let p = p.as_mut_slice();
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
