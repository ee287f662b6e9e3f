//! Core library for a multi-scale change-detection network.
//!
//! Everything numerical lives here: a dense tensor type with reverse-mode
//! autodiff, the weighted-scale / rich-scale / inception building blocks, the
//! U-shaped weighted rich-scale coder, the assembled five-output model, the
//! joint loss and Adam training loop, the multi-resolution data pipeline, and
//! the confusion-matrix evaluation protocol.
//!
//! The crate is `no_std` (with `alloc`) so the math stack carries no IO; file
//! formats and the command-line front end live in the companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod blocks;
pub mod coder;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use graph::{Graph, Var};
pub use model::{Model, ModelConfig, ModelOutputs, Variant};
pub use scalar::Scalar;
pub use tensor::Tensor;
