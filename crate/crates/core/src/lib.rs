//! Bi-fidelity iterative ensemble Kalman inversion.
//!
//! A low-rank bi-fidelity surrogate is trained offline from many cheap
//! low-fidelity solves and a handful of high-fidelity solves at greedily
//! selected parameter points. Online, each ensemble member costs one
//! low-fidelity solve, and the reconstructed high-fidelity states feed an
//! iterative ensemble Kalman update of the parameters.
//!
//! Modules:
//! - [`forward`]: forward-model contract, finite-volume convection-diffusion
//!   solver, linear test model
//! - [`fields`]: Latin hypercube and Karhunen-Loève priors
//! - [`bifidelity`]: point selection, surrogate training and prediction,
//!   a-priori error estimates
//! - [`enkf`]: observations, Kalman analysis, the inversion loop
//! - [`experiment`]: case configs and the train/invert/validate/sweep drivers

pub mod artifact;
pub mod bifidelity;
pub mod enkf;
pub mod experiment;
pub mod error;
pub mod fields;
pub mod forward;
pub mod rng;

pub use error::{Error, Result};
