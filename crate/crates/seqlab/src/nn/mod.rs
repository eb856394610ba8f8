//! Sequence models built from scratch: a simple tanh RNN cell and an
//! LSTM cell, forward propagation over time, exact backpropagation
//! through time, Adam optimization, a mini-batch training loop, and a
//! binary checkpoint format.

mod adam;
mod bptt;
mod checkpoint;
mod model;
mod train;

pub use adam::AdamState;
pub use bptt::Gradients;
pub use checkpoint::{load_checkpoint, param_digest, save_checkpoint};
pub use model::{
    init_model, CellKind, CellParams, CellTrace, ForwardTrace, GateActs, GateParams,
    LstmCellParams, OutputMode, RnnCellParams, SequenceModel,
};
pub use train::{train, Schedule, Supervision, TrainConfig, TrainLog, TrainSample};
