//! Prior samplers: Latin hypercube over boxes and Gaussian random fields via
//! truncated Karhunen-Loève expansion.

mod kl;
mod lhs;

pub use kl::{build_kl_basis, gaussian_sample, sample_field, KernelSpec, KlBasis};
pub use lhs::{lhs_sample, BoxPrior};
