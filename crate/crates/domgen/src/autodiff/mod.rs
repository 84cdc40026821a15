//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! The op vocabulary is deliberately small — exactly what a feed-forward
//! classifier with a variance penalty needs: matrix product, bias add, ReLU,
//! scaling, softmax cross-entropy, mean, variance, and scalar stacking.
//! [`gradcheck`] verifies any computation built from these ops against
//! central finite differences.

pub mod gradcheck;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use tape::{Gradients, NodeId, Tape, VarianceMode};
pub use tensor::Tensor;
