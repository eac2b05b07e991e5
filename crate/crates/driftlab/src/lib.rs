//! driftlab: a desk-scale laboratory for domain-adaptive object detection.
//!
//! The crate generates paired synthetic domains with a style gap and a
//! content-distribution gap, learns a patch-restricted style translation
//! between them, trains a small anchor-based detector, and runs iterative
//! pseudo-label self-training with imbalanced sampling and a progressive
//! confidence schedule, with exact evaluation tooling throughout.

pub mod data;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod exp;
pub mod detect;
pub mod nn;
pub mod plot;
pub mod pseudo;
pub mod selftrain;
pub mod synth;
pub mod translate;

pub use error::{Error, Result};
