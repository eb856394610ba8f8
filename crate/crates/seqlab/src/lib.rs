//! Sequence-model extraction lab: recurrent networks trained from scratch,
//! a query-metered prediction oracle, and attacks that rebuild the model
//! behind it.
//!
//! The crate is organized bottom-up:
//!
//! * [`ndcore`]: dense matrices and the seeded random stream every
//!   experiment draws from.
//! * [`nn`]: recurrent cells, backpropagation through time, the Adam
//!   optimizer, and checkpointing.
//! * [`losses`]: classification and regression objectives, including
//!   temperature distillation and the teacher-bounded regression loss.
//! * [`data`]: digit-image and hourly-sensor loaders, cleaning, windowing,
//!   splits, and synthetic stand-ins for both.
//! * [`oracle`]: the victim model behind a counting, budgeted query
//!   interface, with an optional newline-delimited JSON TCP front.
//! * [`extraction`]: leak scanning, classification and regression
//!   substitute training, and query-budget sweeps.
//! * [`metrics`]: accuracy, per-timestep accuracy, and the coefficient of
//!   determination.
//! * [`selftest`]: fast structural checks wired into the command line.
//!
//! Everything is `f64`, single-threaded, and deterministic for a fixed
//! seed.

pub mod data;
pub mod error;
pub mod extraction;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod ndcore;
pub mod nn;
pub mod oracle;
pub mod selftest;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
