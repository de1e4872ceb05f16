//! Modular end-to-end driving policy with interpretable internals.
//!
//! The policy splits into perception, planning and control modules that
//! expose their latent state: the perception attention matrix becomes a
//! saliency map and the planning output (the latent decision) is decoded
//! into calibrated task probabilities after training. A small corridor-world
//! simulator provides demonstrations and closed-loop evaluation.

pub mod error;
pub mod eval;
pub mod interpret;
pub mod kernels;
pub mod network;
pub mod nn;
pub mod scalar;
pub mod simworld;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{ModelVariant, MoNetParams, NetworkConfig};
pub use scalar::Scalar;

/// Single-precision parameters, used for training and rollouts.
pub type MoNet32 = MoNetParams<f32>;
/// Double-precision parameters, used for gradient checks.
pub type MoNet64 = MoNetParams<f64>;
