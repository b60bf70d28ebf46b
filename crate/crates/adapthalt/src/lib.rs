//! Adaptive computation over a stepwise recurrent model.
//!
//! A small recurrent cell emits an answer and a halting signal at every step.
//! The halting signals form a monotonically decreasing chain of probabilities
//! that implicitly weights the per-step answers into a final output, which
//! keeps training fully differentiable; at inference, closed-form bounds on
//! the remaining steps' influence certify when computation can stop without
//! changing the answer. The crate carries the mechanism, a Graves-style
//! baseline, a micro autodiff tape to train through it, synthetic
//! complexity-labeled tasks, a training/sweep harness, and brute-force
//! verification suites for every closed-form claim.

pub mod act;
pub mod adaptive;
pub mod autodiff;
pub mod cells;
pub mod cli;
pub mod error;
pub mod oracle;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
