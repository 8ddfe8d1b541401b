//! vlapack: a vector-length-agnostic packed-GEMM mini-compiler and
//! scalable-vector virtual machine.
//!
//! The crate lowers matrix multiplication through a pack / packed-matmul /
//! unpack pipeline whose tile sizes are functions of the hardware vector
//! length, emits programs for an abstract SVE-like ISA, and executes or
//! cost-models them at a vector length chosen only at machine construction.

pub mod bench;
pub mod error;
pub mod io;
pub mod ir;
pub mod kernels;
pub mod layout;
pub mod passes;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod vvm;

pub use error::{Error, Result};
