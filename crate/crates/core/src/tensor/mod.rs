//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] owns every tensor of one forward pass plus the record of the
//! operations that produced them. [`Graph::backward`] walks the record once
//! in reverse and accumulates gradients into the leaves. Reductions
//! accumulate in `f64` whatever the element type.

mod graph;
mod gradcheck;
mod ops;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, Probe, RELATIVE_FLOOR};
pub use graph::{CustomOp, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
