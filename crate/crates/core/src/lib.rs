//! Confidence-regularized sample sieve (CORES²) for learning with noisy labels.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`datagen`] builds Gaussian-blob datasets and corrupts their labels with
//!   symmetric, asymmetric, or instance-dependent noise.
//! * [`model`] holds softmax-linear and one-hidden-layer MLP classifiers with
//!   analytic backprop and a momentum SGD optimizer.
//! * [`loss`] collects cross-entropy, the confidence regularizer, the sieve
//!   threshold and decision rule, peer loss, entropy regularization and the
//!   KL consistency loss.
//! * [`sieve`] alternates confidence-regularized training with per-sample
//!   selection.
//! * [`consistency`] trains on the sieved split with CE on kept samples and a
//!   gradient-stopped KL consistency term on dropped samples.
//! * [`theory`] evaluates exact expectations on enumerable worlds: the
//!   three-term decoupling of the regularized risk, the admissible β interval
//!   and related quantities.
//! * [`metrics`] measures sieve quality and test accuracy.
//! * [`cli`] wires everything into config-driven experiment commands.

pub mod cli;
pub mod consistency;
pub mod datagen;
mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sieve;
pub mod theory;

pub use error::{Error, Result};

/// Floor applied inside every logarithm of a probability.
pub const P_FLOOR: f64 = 1e-12;
