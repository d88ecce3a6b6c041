//! Dense tensors, reverse-mode differentiation, seeded randomness and the
//! finite-difference gradient oracle.

mod float;
mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod rng;
mod tensor;

pub use float::{DType, Float};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{BatchStats, BinaryOp, Grads, Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::{RngSnapshot, RngState};
pub use tensor::Tensor;
