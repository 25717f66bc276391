//! Hierarchical dataflow compiler for high-level synthesis.
//!
//! Kernels written in a small affine loop language are parsed into a
//! two-level dataflow IR, optimized (task fusion, multi-producer elimination,
//! path balancing, connection-aware parallelization) and emitted as HLS C++.

pub mod ablate;
pub mod corpus;
pub mod emit;
pub mod estimator;
pub mod exec;
pub mod frontend;
pub mod functional;
pub mod interp;
pub mod ir;
pub mod lowering;
pub mod parallelize;
pub mod pipeline;
pub mod structural;
pub mod syntax;
