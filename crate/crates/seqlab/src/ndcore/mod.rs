//! Minimal numeric kernel: dense `f64` matrices and a deterministic
//! random stream. Everything above this layer is written in terms of
//! these two types.

mod matrix;
mod rng;

pub use matrix::{Activation, ElemOp, Matrix2};
pub use rng::RngStream;
