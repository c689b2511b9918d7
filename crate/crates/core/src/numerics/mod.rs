//! Dense row-major tensors with a tape-based reverse-mode autodiff graph.
//!
//! All arithmetic is `f64`. Graph operations work on rank ≤ 2 tensors; a
//! rank-1 tensor behaves as a single row wherever a matrix is expected.

mod fd;
mod gemm;
mod graph;
mod tensor;

pub use fd::{finite_diff_grad, gradcheck};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

/// Epsilon used by every layer normalization in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;
