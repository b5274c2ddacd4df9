//! Spill-minimizing register tiling for innermost loop bodies.
//!
//! The crate takes a loop body described as a dependence graph, searches for
//! an instruction order, a tiling of the unrolled iteration space and a set of
//! spill decisions that minimize memory loads per iteration under a register
//! limit, and materializes the result as an unrolled pseudo-instruction
//! stream.
//!
//! - [`dfg`]: graph types, ingestion and normalization
//! - [`model`]: solution representation, pressure, feasibility and cost
//! - [`solver`]: branch-and-bound constraint search for an optimal tiling
//! - [`oracle`]: exhaustive reference optimizer for small instances
//! - [`baseline`]: naive and register-pipelining load counts
//! - [`stats`]: corpus statistics and a synthetic instance generator
//! - [`codegen`]: unrolled schedule emission and register assignment

pub mod baseline;
pub mod codegen;
pub mod dfg;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod stats;
