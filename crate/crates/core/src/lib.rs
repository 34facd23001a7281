//! Binary classifiers learned from noisy pairwise similar/dissimilar (SD)
//! labels.
//!
//! - [`losses`]: pointwise losses, the class-prior correction `L`, the scaled
//!   loss `L̂` and the backward-corrected baseline loss.
//! - [`net`]: dense ReLU scorer with backpropagation and Adam.
//! - [`risk`]: empirical and exact SD risks, training and accuracy.
//! - [`data`]: point/pair datasets, noise injection, priors, splits.
//! - [`noise_est`]: SD-conditional noise-rate estimation from anchor pairs.
//! - [`identities`]: the analytic identity suites behind `sdrisk check`.
//! - [`experiment`]: the cross-validated experiment harness used by the CLI.

pub mod data;
pub mod error;
pub mod experiment;
pub mod identities;
pub mod losses;
pub mod net;
pub mod noise_est;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
