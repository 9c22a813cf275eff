//! Subset-scan auditing of probabilistic classifiers.
//!
//! The crate bundles five pieces that together trace how differential
//! sampling bias in training data shows up in a model's predictions:
//!
//! * [`tabular`]: categorical datasets with binary outcomes, subgroups and
//!   canonical CSV I/O.
//! * [`scan`]: the Bernoulli log-likelihood ratio score, its odds-multiplier
//!   MLE and the multi-restart coordinate-ascent subgroup search.
//! * [`inject`]: odds-multiplying bias, analytically and by weighted
//!   resampling.
//! * [`classifiers`]: a profile-frequency estimator and a one-hot logistic
//!   regression with optional interactions.
//! * [`theory`]: closed-form propagated scores, the null critical value and
//!   the minimum detectable bias.
//! * [`harness`]: synthetic generators and the end-to-end experiment engine
//!   used by the `biasprop` CLI.

pub mod classifiers;
pub mod error;
pub mod harness;
pub mod inject;
mod parallel;
pub mod rng;
pub mod scan;
pub mod tabular;
pub mod theory;

pub use error::{Error, Result};
