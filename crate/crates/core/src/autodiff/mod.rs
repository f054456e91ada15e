//! Reverse-mode automatic differentiation over `f64` tensors.

mod gradcheck;
mod graph;
pub mod kernels;

pub use gradcheck::check_gradient;
pub use graph::{log_sum_exp, softmax_row, Gradients, Graph, Var};

#[cfg(test)]
mod tests;
