//! Minimal dense-tensor reverse-mode automatic differentiation: enough to
//! train a small recurrent cell end-to-end through the halting-chain
//! combination, in 64-bit floats throughout.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{finite_diff_gradient, relative_error};
pub use graph::{Graph, NodeId, Op};
pub use params::{AdamConfig, ParamEntry, ParamStore, CHECKPOINT_MAGIC};
pub use tensor::{Tensor, LOG_CLAMP};

pub(crate) use tensor::{matvec_into, sigmoid, softmax_into};
