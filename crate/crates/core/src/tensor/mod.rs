//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a single-use tape: operations append nodes, each node keeps
//! its forward values, and [`Graph::backward`] walks the tape in reverse to
//! accumulate gradients. Tape order is a topological order by construction,
//! so the reverse pass visits every node exactly once. All math is `f64`;
//! double precision keeps gradient checks and run replays bit-exact.
//!
//! Graphs are single-threaded. Parallelism happens one level up: each
//! training example builds its own graph and the per-example gradients are
//! folded in a fixed order, so results do not depend on thread count.

mod graph;
mod ops;

pub use graph::{Graph, Node, NodeId, Op};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} invalid for rank-{rank} tensor")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

/// Number of elements implied by a shape.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
