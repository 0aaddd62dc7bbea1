//! Bayesian joint latent class models for a longitudinal marker and a
//! time-to-event outcome.
//!
//! The class label is summed out of the posterior so that all continuous
//! parameters and random effects can be sampled with NUTS. Several chains are
//! run from dispersed starts; the chain with the largest truncated harmonic
//! mean weight is kept, class labels are drawn from their full conditional,
//! and WAIC / PSIS-LOO compare models with different numbers of classes.

pub mod error;
pub mod fit;
pub mod grad;
pub mod io;
pub mod math;
pub mod model;
pub mod modelsel;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
