use crate::error::{Error, Result};
use crate::ndcore::Matrix2;
use crate::nn::model::{
    CellParams, CellTrace, ForwardTrace, GateParams, LstmCellParams, OutputMode, RnnCellParams,
    SequenceModel,
};

/// Parameter gradients, stored in the same structure and order as the
/// model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub cell: CellParams,
    pub w_hy: Matrix2,
    pub b_y: Matrix2,
}

impl Gradients {
    pub fn zeros_like(model: &SequenceModel) -> Result<Self> {
        let zero = |m: &Matrix2| Matrix2::zeros(m.rows(), m.cols());
        let zero_gate = |g: &GateParams| -> Result<GateParams> {
            Ok(GateParams {
                w_x: zero(&g.w_x)?,
                w_h: zero(&g.w_h)?,
                b: zero(&g.b)?,
            })
        };
        let cell = match &model.cell {
            CellParams::Rnn(c) => CellParams::Rnn(RnnCellParams {
                w_xh: zero(&c.w_xh)?,
                w_hh: zero(&c.w_hh)?,
                b_h: zero(&c.b_h)?,
            }),
            CellParams::Lstm(c) => CellParams::Lstm(LstmCellParams {
                input: zero_gate(&c.input)?,
                forget: zero_gate(&c.forget)?,
                output: zero_gate(&c.output)?,
                candidate: zero_gate(&c.candidate)?,
            }),
        };
        Ok(Gradients {
            cell,
            w_hy: zero(&model.w_hy)?,
            b_y: zero(&model.b_y)?,
        })
    }

    pub fn param_vec(&self) -> Vec<&Matrix2> {
        let mut out: Vec<&Matrix2> = Vec::new();
        match &self.cell {
            CellParams::Rnn(c) => {
                out.push(&c.w_xh);
                out.push(&c.w_hh);
                out.push(&c.b_h);
            }
            CellParams::Lstm(c) => {
                for (_, g) in c.gates() {
                    out.push(&g.w_x);
                    out.push(&g.w_h);
                    out.push(&g.b);
                }
            }
        }
        out.push(&self.w_hy);
        out.push(&self.b_y);
        out
    }

    pub fn param_vec_mut(&mut self) -> Vec<&mut Matrix2> {
        let mut out: Vec<&mut Matrix2> = Vec::new();
        match &mut self.cell {
            CellParams::Rnn(c) => {
                out.push(&mut c.w_xh);
                out.push(&mut c.w_hh);
                out.push(&mut c.b_h);
            }
            CellParams::Lstm(c) => {
                for (_, g) in c.gates_mut() {
                    out.push(&mut g.w_x);
                    out.push(&mut g.w_h);
                    out.push(&mut g.b);
                }
            }
        }
        out.push(&mut self.w_hy);
        out.push(&mut self.b_y);
        out
    }

    pub fn zero(&mut self) {
        for p in self.param_vec_mut() {
            p.fill(0.0);
        }
    }

    pub fn scale_assign(&mut self, alpha: f64) {
        for p in self.param_vec_mut() {
            p.scale_assign(alpha);
        }
    }

    /// Global L2 norm across every parameter gradient.
    pub fn global_norm(&self) -> f64 {
        self.param_vec()
            .iter()
            .map(|p| p.sq_sum())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global norm does not exceed `max_norm`; returns the
    /// norm measured before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_assign(max_norm / norm);
        }
        norm
    }
}

impl SequenceModel {
    /// Backpropagation through time. `dloss_dlogits` must align with the
    /// outputs `forward` emitted: one gradient vector per timestep in
    /// per-step mode (zero vectors where a timestep is unsupervised), or
    /// exactly one vector in final-only mode. Gradients are accumulated
    /// into `grads`.
    pub fn bptt_into(
        &self,
        trace: &ForwardTrace,
        dloss_dlogits: &[Matrix2],
        grads: &mut Gradients,
    ) -> Result<()> {
        let steps = trace.steps();
        let expected = match self.output_mode {
            OutputMode::PerStep => steps,
            OutputMode::FinalOnly => 1,
        };
        if dloss_dlogits.len() != expected {
            return Err(Error::invalid(format!(
                "bptt expected {expected} upstream gradient vectors, got {}",
                dloss_dlogits.len()
            )));
        }
        for dy in dloss_dlogits {
            if dy.shape() != (self.output_dim, 1) {
                return Err(Error::ShapeMismatch {
                    op: "bptt",
                    left: (self.output_dim, 1),
                    right: dy.shape(),
                });
            }
        }

        let mut dh_next = Matrix2::zeros(self.hidden_dim, 1)?;
        let mut dc_next = Matrix2::zeros(self.hidden_dim, 1)?;

        for t in (0..steps).rev() {
            let dy = match self.output_mode {
                OutputMode::PerStep => Some(&dloss_dlogits[t]),
                OutputMode::FinalOnly if t + 1 == steps => Some(&dloss_dlogits[0]),
                OutputMode::FinalOnly => None,
            };
            let h_t = &trace.hs[t + 1];

            // dL/dh_t: contribution through the output head at t plus the
            // carry from timestep t+1.
            let mut dh = dh_next;
            if let Some(dy) = dy {
                if dy.as_slice().iter().any(|&v| v != 0.0) {
                    grads.w_hy.add_outer_assign(dy, h_t)?;
                    grads.b_y.add_assign(dy)?;
                    dh.add_assign(&self.w_hy.tr_matmul(dy)?)?;
                }
            }

            match (&self.cell, &trace.cell, &mut grads.cell) {
                (CellParams::Rnn(c), CellTrace::Rnn, CellParams::Rnn(gc)) => {
                    // h_t = tanh(z): dz = dh ⊙ (1 − h_t²).
                    let mut dz = dh;
                    for (dzv, &h) in dz.as_mut_slice().iter_mut().zip(h_t.as_slice()) {
                        *dzv *= 1.0 - h * h;
                    }
                    gc.w_xh.add_outer_assign(&dz, &trace.inputs[t])?;
                    gc.w_hh.add_outer_assign(&dz, &trace.hs[t])?;
                    gc.b_h.add_assign(&dz)?;
                    dh_next = c.w_hh.tr_matmul(&dz)?;
                }
                (
                    CellParams::Lstm(c),
                    CellTrace::Lstm { cs, gates, tanh_c },
                    CellParams::Lstm(gc),
                ) => {
                    let ga = &gates[t];
                    let tc = &tanh_c[t];
                    let c_prev = &cs[t];
                    let n = self.hidden_dim;

                    // h_t = o ⊙ tanh(c_t); c_t = f ⊙ c_{t-1} + i ⊙ g.
                    let mut dzo = Matrix2::zeros(n, 1)?;
                    let mut dc = Matrix2::zeros(n, 1)?;
                    let mut dzf = Matrix2::zeros(n, 1)?;
                    let mut dzi = Matrix2::zeros(n, 1)?;
                    let mut dzg = Matrix2::zeros(n, 1)?;
                    {
                        let dh_s = dh.as_slice();
                        let o_s = ga.o.as_slice();
                        let i_s = ga.i.as_slice();
                        let f_s = ga.f.as_slice();
                        let g_s = ga.g.as_slice();
                        let tc_s = tc.as_slice();
                        let cprev_s = c_prev.as_slice();
                        let dcnext_s = dc_next.as_slice();
                        for k in 0..n {
                            let d_o = dh_s[k] * tc_s[k];
                            dzo.as_mut_slice()[k] = d_o * o_s[k] * (1.0 - o_s[k]);
                            let dck =
                                dh_s[k] * o_s[k] * (1.0 - tc_s[k] * tc_s[k]) + dcnext_s[k];
                            dc.as_mut_slice()[k] = dck;
                            let d_f = dck * cprev_s[k];
                            dzf.as_mut_slice()[k] = d_f * f_s[k] * (1.0 - f_s[k]);
                            let d_i = dck * g_s[k];
                            dzi.as_mut_slice()[k] = d_i * i_s[k] * (1.0 - i_s[k]);
                            let d_g = dck * i_s[k];
                            dzg.as_mut_slice()[k] = d_g * (1.0 - g_s[k] * g_s[k]);
                        }
                    }

                    let x_t = &trace.inputs[t];
                    let h_prev = &trace.hs[t];
                    dh_next = Matrix2::zeros(n, 1)?;
                    for (params, grad, dz) in [
                        (&c.input, &mut gc.input, &dzi),
                        (&c.forget, &mut gc.forget, &dzf),
                        (&c.output, &mut gc.output, &dzo),
                        (&c.candidate, &mut gc.candidate, &dzg),
                    ] {
                        grad.w_x.add_outer_assign(dz, x_t)?;
                        grad.w_h.add_outer_assign(dz, h_prev)?;
                        grad.b.add_assign(dz)?;
                        dh_next.add_assign(&params.w_h.tr_matmul(dz)?)?;
                    }

                    // Carry into timestep t-1: dc_{t-1} = dc_t ⊙ f_t.
                    dc_next = dc.hadamard(&ga.f)?;
                }
                _ => {
                    return Err(Error::invalid(
                        "forward trace does not match the model's cell kind".to_string(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Convenience wrapper returning fresh gradients.
    pub fn bptt(&self, trace: &ForwardTrace, dloss_dlogits: &[Matrix2]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self)?;
        self.bptt_into(trace, dloss_dlogits, &mut grads)?;
        Ok(grads)
    }
}
