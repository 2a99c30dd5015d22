//! Reverse-mode automatic differentiation over dense matrix operations.
//!
//! The tape records a fixed vocabulary of ops (including Cholesky and
//! triangular solves), evaluates forward in id order against leaf
//! bindings, and accumulates adjoints in a single reverse sweep.

mod linalg;
mod tape;
mod value;

pub use linalg::{chol_rev, chol_rev_blocked, cholesky, matmul, trisolve, trisolve_rev};
pub use tape::{Node, NodeId, OpKind, Tape};
pub use value::Value;
