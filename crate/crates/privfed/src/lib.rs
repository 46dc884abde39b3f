//! Privacy-preserving federated learning at desk scale.
//!
//! The crate trains small image classifiers across simulated hospital nodes,
//! aggregates model updates with additive secret sharing so no individual
//! update is ever revealed, serves encrypted two-party inference built on
//! function secret sharing, and ships a gradient-inversion attack harness for
//! measuring what each deployment mode actually leaks.
//!
//! Entry points:
//! - [`fixed`]: fixed-point tensors over Z_2^64 and the `FXT1` serialization.
//! - [`shares`]: additive secret sharing, Beaver triples, secure summation.
//! - [`fss`]: distributed comparison functions, private ReLU and argmax.
//! - [`nn`]: a small CNN/MLP stack with manual backpropagation and the
//!   evaluation metric suite (MCC, Cohen's kappa, McNemar, ROC-AUC).
//! - [`federation`]: dataset-size-weighted federated averaging, plain and
//!   secure, with per-round reports.
//! - [`inference`]: the two-party encrypted inference protocol and service.
//! - [`attack`]: gradient-inversion reconstruction and the leakage benchmark.
//! - [`transport`]: framed messaging over a deterministic virtual-clock
//!   simulator or real TCP, with byte/round/latency meters.
//! - [`cli`]: the workflows behind the `privfed` binary.
//!
//! The runnable `examples/` directory demonstrates each capability end to end.

pub mod attack;
pub mod cli;
pub mod config;
pub mod error;
pub mod federation;
pub mod fixed;
pub mod fss;
pub mod inference;
pub mod nn;
pub mod seed;
pub mod shares;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};
