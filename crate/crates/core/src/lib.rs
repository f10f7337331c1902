//! Desk-scale kernels for three-branch ultrasound video classification.
//!
//! The pipeline samples fixed-length clips from variable-length videos with
//! a coverage-preserving heuristic, encodes each clip through three aligned
//! branches — a residual spatio-temporal network, normalization-gated
//! attention over pluggable per-frame features, and a Haar-wavelet
//! reconstruction path — fuses them with channel-projection pyramid wiring,
//! and scores two-class logits. Around the model sit deterministic synthetic
//! data generators, a logistic probe with analytic gradients, and the
//! evaluation protocol (six metrics, bootstrap confidence intervals,
//! patient-level cross-validation).
//!
//! Everything is seeded: given the same seeds and inputs, every function in
//! this crate reproduces its output bit for bit. See the [`rng`] module for
//! the generator contract and [`tensor`] for the binary tensor format.

pub mod backbone;
pub mod error;
pub mod evalkit;
pub mod experiments;
pub mod fusion;
pub mod model;
pub mod nam;
pub mod ops;
pub mod probe;
pub mod rng;
pub mod sampler;
pub mod synthgen;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{AxisRole, Tensor};
