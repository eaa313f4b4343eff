//! Noise synthesis for the two-fold Laplace mechanism.
//!
//! The mechanism draws Laplace noise whose inverse scale `1/b` is itself a
//! random variable `Y` with a mixture distribution over Gamma, Exponential
//! and Uniform components. Everything downstream of that idea lives here:
//!
//! - [`mgf`]: the mixture components and moment-generating-function algebra;
//! - [`accountant`]: closed-form Renyi-DP curves, composition and the
//!   conversion to `(epsilon, delta)`-DP;
//! - [`search`]: offline grid search for budget-feasible noise parameters
//!   maximizing usefulness;
//! - [`sampler`]: reproducible exact sampling of the two-fold noise and the
//!   Gaussian baseline;
//! - [`metrics`] / [`quadrature`] / [`analysis`]: histogram metrics, a
//!   numeric Renyi-divergence oracle and the comparison/quantification
//!   harnesses;
//! - [`dpsgd`]: a desk-scale private training loop for multinomial logistic
//!   regression.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the CLI
//! live in the companion `lmo-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod accountant;
pub mod analysis;
pub mod dpsgd;
pub mod metrics;
pub mod mgf;
pub mod quadrature;
pub mod sampler;
pub mod search;

/// Crate version, re-exported for artifact manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use accountant::{PrivacyBudget, RdpCurve};
pub use mgf::{ComponentDist, CompositionMode, MixtureSpec};
pub use search::{SearchGrid, SearchResult};
