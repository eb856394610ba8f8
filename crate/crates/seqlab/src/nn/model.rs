use crate::error::{Error, Result};
use crate::ndcore::{Activation, Matrix2, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Rnn,
    Lstm,
}

/// Output head behavior: emit a logit vector at every timestep
/// (many-to-many) or only at the final timestep (many-to-one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    PerStep,
    FinalOnly,
}

/// Simple recurrent cell: h_t = tanh(W_xh x_t + W_hh h_{t-1} + b_h).
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams {
    pub w_xh: Matrix2,
    pub w_hh: Matrix2,
    pub b_h: Matrix2,
}

/// One LSTM gate's parameters: z = W_x x_t + W_h h_{t-1} + b.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_x: Matrix2,
    pub w_h: Matrix2,
    pub b: Matrix2,
}

/// LSTM cell with input, forget, output and candidate gates:
///   i = σ(z_i), f = σ(z_f), o = σ(z_o), g = tanh(z_g)
///   c_t = f ⊙ c_{t-1} + i ⊙ g
///   h_t = o ⊙ tanh(c_t)
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

impl LstmCellParams {
    pub fn gates(&self) -> [(&'static str, &GateParams); 4] {
        [
            ("input", &self.input),
            ("forget", &self.forget),
            ("output", &self.output),
            ("candidate", &self.candidate),
        ]
    }

    pub fn gates_mut(&mut self) -> [(&'static str, &mut GateParams); 4] {
        [
            ("input", &mut self.input),
            ("forget", &mut self.forget),
            ("output", &mut self.output),
            ("candidate", &mut self.candidate),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Rnn(RnnCellParams),
    Lstm(LstmCellParams),
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Rnn(_) => CellKind::Rnn,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }
}

/// A recurrent sequence model: one recurrent cell plus a shared linear
/// output head y_t = W_hy h_t + b_y applied per the output mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub cell: CellParams,
    pub w_hy: Matrix2,
    pub b_y: Matrix2,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub output_mode: OutputMode,
}

/// LSTM gate activations cached for one timestep.
#[derive(Debug, Clone)]
pub struct GateActs {
    pub i: Matrix2,
    pub f: Matrix2,
    pub o: Matrix2,
    pub g: Matrix2,
}

/// Cell-specific forward caches needed by backpropagation through time.
#[derive(Debug, Clone)]
pub enum CellTrace {
    Rnn,
    Lstm {
        /// Cell states c_0..c_T (length T+1, c_0 zero).
        cs: Vec<Matrix2>,
        /// Gate activations per timestep.
        gates: Vec<GateActs>,
        /// tanh(c_t) per timestep.
        tanh_c: Vec<Matrix2>,
    },
}

/// Everything the forward pass caches for one sequence. `hs` holds
/// h_0..h_T with h_0 zero, so each per-timestep vector has length equal
/// to the input sequence length.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub inputs: Vec<Matrix2>,
    pub hs: Vec<Matrix2>,
    pub cell: CellTrace,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Fresh model with weights drawn uniformly from [−s, s) where
/// s = 1/sqrt(fan_in). Biases start at zero except the LSTM forget-gate
/// bias, which starts at 1 so early training does not erase cell state.
pub fn init_model(
    rng: &mut RngStream,
    cell_kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    output_mode: OutputMode,
) -> Result<SequenceModel> {
    if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
        return Err(Error::invalid(format!(
            "model dims must be positive, got input {input_dim}, hidden {hidden_dim}, output {output_dim}"
        )));
    }
    let sx = 1.0 / (input_dim as f64).sqrt();
    let sh = 1.0 / (hidden_dim as f64).sqrt();
    let gate = |rng: &mut RngStream, bias: f64| -> Result<GateParams> {
        Ok(GateParams {
            w_x: Matrix2::rand_uniform(rng, hidden_dim, input_dim, -sx, sx)?,
            w_h: Matrix2::rand_uniform(rng, hidden_dim, hidden_dim, -sh, sh)?,
            b: Matrix2::filled(hidden_dim, 1, bias)?,
        })
    };
    let cell = match cell_kind {
        CellKind::Rnn => CellParams::Rnn(RnnCellParams {
            w_xh: Matrix2::rand_uniform(rng, hidden_dim, input_dim, -sx, sx)?,
            w_hh: Matrix2::rand_uniform(rng, hidden_dim, hidden_dim, -sh, sh)?,
            b_h: Matrix2::zeros(hidden_dim, 1)?,
        }),
        CellKind::Lstm => CellParams::Lstm(LstmCellParams {
            input: gate(rng, 0.0)?,
            forget: gate(rng, 1.0)?,
            output: gate(rng, 0.0)?,
            candidate: gate(rng, 0.0)?,
        }),
    };
    Ok(SequenceModel {
        cell,
        w_hy: Matrix2::rand_uniform(rng, output_dim, hidden_dim, -sh, sh)?,
        b_y: Matrix2::zeros(output_dim, 1)?,
        input_dim,
        hidden_dim,
        output_dim,
        output_mode,
    })
}

impl SequenceModel {
    pub fn cell_kind(&self) -> CellKind {
        self.cell.kind()
    }

    /// Parameters in a fixed order with stable names; the order is shared
    /// by gradients, optimizer state and checkpoints.
    pub fn named_params(&self) -> Vec<(String, &Matrix2)> {
        let mut out = Vec::new();
        match &self.cell {
            CellParams::Rnn(c) => {
                out.push(("w_xh".to_string(), &c.w_xh));
                out.push(("w_hh".to_string(), &c.w_hh));
                out.push(("b_h".to_string(), &c.b_h));
            }
            CellParams::Lstm(c) => {
                for (name, g) in c.gates() {
                    out.push((format!("{name}.w_x"), &g.w_x));
                    out.push((format!("{name}.w_h"), &g.w_h));
                    out.push((format!("{name}.b"), &g.b));
                }
            }
        }
        out.push(("w_hy".to_string(), &self.w_hy));
        out.push(("b_y".to_string(), &self.b_y));
        out
    }

    pub fn param_vec(&self) -> Vec<&Matrix2> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
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

    pub fn param_count(&self) -> usize {
        self.param_vec().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, seq: &[Matrix2]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptyInput("forward on empty sequence"));
        }
        for x in seq {
            if x.shape() != (self.input_dim, 1) {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    left: (self.input_dim, 1),
                    right: x.shape(),
                });
            }
        }
        Ok(())
    }

    fn output_at(&self, h: &Matrix2) -> Result<Matrix2> {
        let mut y = self.b_y.clone();
        y.add_matvec_assign(&self.w_hy, h)?;
        Ok(y)
    }

    /// Run the sequence through the cell. Returns the emitted logit
    /// vectors (one per timestep, or only the final one) plus the trace
    /// backpropagation needs.
    pub fn forward(&self, seq: &[Matrix2]) -> Result<(Vec<Matrix2>, ForwardTrace)> {
        self.check_input(seq)?;
        let steps = seq.len();
        let mut hs = Vec::with_capacity(steps + 1);
        hs.push(Matrix2::zeros(self.hidden_dim, 1)?);
        let mut outputs = Vec::new();

        let cell_trace = match &self.cell {
            CellParams::Rnn(c) => {
                for x in seq {
                    let mut z = c.b_h.clone();
                    z.add_matvec_assign(&c.w_xh, x)?;
                    z.add_matvec_assign(&c.w_hh, hs.last().unwrap())?;
                    hs.push(z.map_activation(Activation::Tanh));
                }
                CellTrace::Rnn
            }
            CellParams::Lstm(c) => {
                let mut cs = Vec::with_capacity(steps + 1);
                cs.push(Matrix2::zeros(self.hidden_dim, 1)?);
                let mut gates = Vec::with_capacity(steps);
                let mut tanh_cs = Vec::with_capacity(steps);
                for x in seq {
                    let h_prev = hs.last().unwrap();
                    let pre = |g: &GateParams| -> Result<Matrix2> {
                        let mut z = g.b.clone();
                        z.add_matvec_assign(&g.w_x, x)?;
                        z.add_matvec_assign(&g.w_h, h_prev)?;
                        Ok(z)
                    };
                    let i = pre(&c.input)?.map_activation(Activation::Sigmoid);
                    let f = pre(&c.forget)?.map_activation(Activation::Sigmoid);
                    let o = pre(&c.output)?.map_activation(Activation::Sigmoid);
                    let g = pre(&c.candidate)?.map_activation(Activation::Tanh);
                    let c_prev = cs.last().unwrap();
                    let c_new = f.hadamard(c_prev)?.add(&i.hadamard(&g)?)?;
                    let tanh_c = c_new.map_activation(Activation::Tanh);
                    let h = o.hadamard(&tanh_c)?;
                    cs.push(c_new);
                    tanh_cs.push(tanh_c);
                    gates.push(GateActs { i, f, o, g });
                    hs.push(h);
                }
                CellTrace::Lstm {
                    cs,
                    gates,
                    tanh_c: tanh_cs,
                }
            }
        };

        match self.output_mode {
            OutputMode::PerStep => {
                for h in hs.iter().skip(1) {
                    outputs.push(self.output_at(h)?);
                }
            }
            OutputMode::FinalOnly => {
                outputs.push(self.output_at(hs.last().unwrap())?);
            }
        }

        Ok((
            outputs,
            ForwardTrace {
                inputs: seq.to_vec(),
                hs,
                cell: cell_trace,
            },
        ))
    }

    /// Forward pass returning only the emitted outputs.
    pub fn predict(&self, seq: &[Matrix2]) -> Result<Vec<Matrix2>> {
        Ok(self.forward(seq)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Matrix2 {
        Matrix2::column(values).unwrap()
    }

    fn small_model(kind: CellKind, mode: OutputMode, seed: u64) -> SequenceModel {
        let mut rng = RngStream::new(seed);
        init_model(&mut rng, kind, 3, 4, 2, mode).unwrap()
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut rng = RngStream::new(0);
        assert!(init_model(&mut rng, CellKind::Rnn, 0, 4, 2, OutputMode::PerStep).is_err());
        assert!(init_model(&mut rng, CellKind::Rnn, 3, 0, 2, OutputMode::PerStep).is_err());
        assert!(init_model(&mut rng, CellKind::Lstm, 3, 4, 0, OutputMode::PerStep).is_err());
    }

    #[test]
    fn init_respects_fan_in_bounds_and_forget_bias() {
        let mut rng = RngStream::new(1);
        let model = init_model(&mut rng, CellKind::Lstm, 16, 9, 4, OutputMode::PerStep).unwrap();
        let sx = 1.0 / 4.0;
        let sh = 1.0 / 3.0;
        if let CellParams::Lstm(c) = &model.cell {
            for (_, g) in c.gates() {
                assert!(g.w_x.as_slice().iter().all(|v| v.abs() <= sx));
                assert!(g.w_h.as_slice().iter().all(|v| v.abs() <= sh));
            }
            assert!(c.forget.b.as_slice().iter().all(|&v| v == 1.0));
            assert!(c.input.b.as_slice().iter().all(|&v| v == 0.0));
        } else {
            panic!("expected LSTM cell");
        }
    }

    #[test]
    fn hidden_dim_one_degenerate_model_runs() {
        let mut rng = RngStream::new(2);
        for kind in [CellKind::Rnn, CellKind::Lstm] {
            let model = init_model(&mut rng, kind, 1, 1, 1, OutputMode::PerStep).unwrap();
            let seq = vec![col(&[0.5]), col(&[-0.25])];
            let (outputs, trace) = model.forward(&seq).unwrap();
            assert_eq!(outputs.len(), 2);
            assert_eq!(trace.steps(), 2);
        }
    }

    #[test]
    fn zero_weights_emit_output_bias_everywhere() {
        for kind in [CellKind::Rnn, CellKind::Lstm] {
            let mut model = small_model(kind, OutputMode::PerStep, 3);
            for p in model.param_vec_mut() {
                p.fill(0.0);
            }
            model.b_y = col(&[0.7, -0.2]);
            let seq = vec![col(&[1.0, 2.0, 3.0]); 5];
            let (outputs, _) = model.forward(&seq).unwrap();
            for y in outputs {
                assert_eq!(y, col(&[0.7, -0.2]));
            }
        }
    }

    #[test]
    fn length_one_sequence_is_a_feedforward_pass() {
        let model = small_model(CellKind::Rnn, OutputMode::PerStep, 4);
        let x = col(&[0.2, -0.4, 0.9]);
        let (outputs, _) = model.forward(std::slice::from_ref(&x)).unwrap();
        // By hand: h = tanh(W_xh x + b_h) with h_0 = 0, y = W_hy h + b_y.
        let c = match &model.cell {
            CellParams::Rnn(c) => c,
            _ => unreachable!(),
        };
        let h = c
            .w_xh
            .matmul(&x)
            .unwrap()
            .add(&c.b_h)
            .unwrap()
            .map_activation(Activation::Tanh);
        let y = model.w_hy.matmul(&h).unwrap().add(&model.b_y).unwrap();
        for (a, b) in outputs[0].as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rnn_forward_matches_scalar_loop_oracle() {
        // Independent scalar reimplementation of the recurrence on a
        // 2-unit model, no matrix code involved.
        let mut rng = RngStream::new(5);
        let model = init_model(&mut rng, CellKind::Rnn, 2, 2, 2, OutputMode::PerStep).unwrap();
        let c = match &model.cell {
            CellParams::Rnn(c) => c.clone(),
            _ => unreachable!(),
        };
        let seq = vec![col(&[0.3, -0.7]), col(&[1.0, 0.5]), col(&[-0.2, 0.0])];

        let mut h = [0.0f64; 2];
        let mut expected = Vec::new();
        for x in &seq {
            let mut new_h = [0.0f64; 2];
            for r in 0..2 {
                let mut z = c.b_h.get(r, 0);
                for k in 0..2 {
                    z += c.w_xh.get(r, k) * x.get(k, 0);
                    z += c.w_hh.get(r, k) * h[k];
                }
                new_h[r] = z.tanh();
            }
            h = new_h;
            let mut y = [0.0f64; 2];
            for r in 0..2 {
                let mut z = model.b_y.get(r, 0);
                for k in 0..2 {
                    z += model.w_hy.get(r, k) * h[k];
                }
                y[r] = z;
            }
            expected.push(y);
        }

        let (outputs, _) = model.forward(&seq).unwrap();
        for (got, want) in outputs.iter().zip(&expected) {
            for r in 0..2 {
                assert!((got.get(r, 0) - want[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn final_only_equals_last_per_step_output() {
        for kind in [CellKind::Rnn, CellKind::Lstm] {
            let per_step = small_model(kind, OutputMode::PerStep, 6);
            let mut final_only = per_step.clone();
            final_only.output_mode = OutputMode::FinalOnly;
            let mut rng = RngStream::new(100);
            let seq: Vec<Matrix2> = (0..7)
                .map(|_| Matrix2::rand_uniform(&mut rng, 3, 1, -1.0, 1.0).unwrap())
                .collect();
            let (all, _) = per_step.forward(&seq).unwrap();
            let (last, _) = final_only.forward(&seq).unwrap();
            assert_eq!(all.len(), 7);
            assert_eq!(last.len(), 1);
            assert_eq!(last[0], *all.last().unwrap());
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let model = small_model(CellKind::Rnn, OutputMode::PerStep, 7);
        assert!(model.forward(&[]).is_err());
        let wrong = vec![col(&[1.0, 2.0])];
        assert!(model.forward(&wrong).is_err());
    }

    #[test]
    fn named_params_cover_every_matrix_once() {
        let rnn = small_model(CellKind::Rnn, OutputMode::PerStep, 8);
        let names: Vec<String> = rnn.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["w_xh", "w_hh", "b_h", "w_hy", "b_y"]);

        let lstm = small_model(CellKind::Lstm, OutputMode::PerStep, 8);
        let names: Vec<String> = lstm.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 14);
        assert_eq!(names[0], "input.w_x");
        assert_eq!(names[12], "w_hy");
        // Same order from the mutable accessor.
        let mut lstm_mut = lstm.clone();
        assert_eq!(lstm_mut.param_vec_mut().len(), 14);
    }
}
