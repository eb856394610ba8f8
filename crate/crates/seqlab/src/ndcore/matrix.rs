use crate::error::{Error, Result};
use crate::ndcore::rng::RngStream;
use serde::{Deserialize, Serialize};

/// Pointwise nonlinearities used by the recurrent cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's own output value,
    /// which is what backprop has in hand.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Binary elementwise operations on same-shape matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
}

/// Dense 2-D matrix of `f64` in row-major order. Column vectors are `n x 1`.
///
/// This is deliberately small: just the operations the recurrent cells,
/// their gradients and the experiment code need, with shape checks on
/// every binary operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix2 { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    /// Column vector (`n x 1`) from a slice.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// Matrix with entries drawn uniformly from `[lo, hi)`.
    pub fn rand_uniform(
        rng: &mut RngStream,
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::invalid(format!(
                "uniform bounds out of order: [{lo}, {hi})"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(rng.uniform(lo, hi));
        }
        Self::new(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let start = r * self.cols;
        &self.data[start..start + self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let start = r * self.cols;
        &mut self.data[start..start + self.cols]
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `self * other` with the usual inner-dimension requirement.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix2::zeros(self.rows, other.cols)?;
        // i-k-j loop order keeps both the `other` row and the output row
        // contiguous, which the compiler vectorizes well.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    /// `transpose(self) * other` without materializing the transpose.
    /// The workhorse behind backprop's `W^T * delta` products.
    pub fn tr_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "tr_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix2::zeros(self.cols, other.cols)?;
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self += u * transpose(v)` for column vectors `u` (rows x 1) and
    /// `v` (cols x 1). Accumulates weight gradients without allocating.
    pub fn add_outer_assign(&mut self, u: &Self, v: &Self) -> Result<()> {
        if u.cols != 1 || v.cols != 1 || u.rows != self.rows || v.rows != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_outer_assign",
                left: u.shape(),
                right: v.shape(),
            });
        }
        for r in 0..self.rows {
            let scale = u.data[r];
            if scale == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (o, &x) in row.iter_mut().zip(&v.data) {
                *o += scale * x;
            }
        }
        Ok(())
    }

    /// `self += w * x` for `w` (rows x k) and a column vector `x` (k x 1).
    /// The fused affine step used by the recurrent cells' forward pass.
    pub fn add_matvec_assign(&mut self, w: &Self, x: &Self) -> Result<()> {
        if self.cols != 1 || x.cols != 1 || w.rows != self.rows || w.cols != x.rows {
            return Err(Error::ShapeMismatch {
                op: "add_matvec_assign",
                left: w.shape(),
                right: x.shape(),
            });
        }
        for r in 0..w.rows {
            let row = w.row(r);
            let mut acc = 0.0;
            for (&a, &b) in row.iter().zip(&x.data) {
                acc += a * b;
            }
            self.data[r] += acc;
        }
        Ok(())
    }

    pub fn elementwise(&self, other: &Self, op: ElemOp) -> Result<Self> {
        self.check_same_shape(other, "elementwise")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| match op {
                ElemOp::Add => a + b,
                ElemOp::Sub => a - b,
                ElemOp::Mul => a * b,
            })
            .collect();
        Matrix2::new(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, ElemOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, ElemOp::Sub)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, ElemOp::Mul)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy_assign(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale_assign(alpha);
        out
    }

    pub fn map_activation(&self, act: Activation) -> Self {
        let data = self.data.iter().map(|&x| act.apply(x)).collect();
        Matrix2 {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Matrix2 {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix2 {
            rows: self.cols,
            cols: self.rows,
            data: vec![0.0; self.data.len()],
        };
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Sum of squared entries.
    pub fn sq_sum(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut best_val = self.data[0];
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        best
    }
}
