//! Code smell detection from a fused pair of inputs: structural software
//! metrics and an encoded view of the source code.
//!
//! The pipeline runs `corpus` (labels) and `metrics` / `encode` (features)
//! into `model` (a convolutional-recurrent branch and a dense branch joined
//! by a small classifier), with `eval` supplying the metrics and the
//! cross-validation protocol.

pub mod corpus;
pub mod dataset;
pub mod encode;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fsutil;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, ErrorClass, Result};
pub use exec::Execution;
