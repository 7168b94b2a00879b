//! Reverse-mode differentiation over dense float64 tensors, Adam, and a
//! finite-difference checker.

mod adam;
mod check;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use check::{finite_diff_check, relative_error, round_off_floor, FdReport, RELATIVE_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::sech2;
pub use params::ParamSet;
pub use tensor::Tensor;
