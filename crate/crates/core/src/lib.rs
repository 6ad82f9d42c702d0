//! Sparse multivariate regression for mixed binary and continuous outcomes
//! under spike-and-slab LASSO priors.
//!
//! Outcomes are modelled through a latent Gaussian regression
//! `z_i ~ N(Bᵀx_i, Ω⁻¹)`, with continuous outcomes observed directly and
//! binary outcomes observed as the sign of their latent coordinate. The MAP
//! estimate of `(B, Ω)` is approximated by a Monte Carlo ECM algorithm: an
//! E-step that samples the binary latents and refreshes entry-wise adaptive
//! penalties, followed by coordinate ascent over `B` and a penalized
//! log-determinant solve for `Ω`, repeated along a ladder of spike penalties.

pub mod cm_beta;
pub mod cm_omega;
pub mod driver;
pub mod error;
pub mod estep;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod simgen;
pub mod types;

pub use error::{LinalgError, MsslError, Result};
pub use types::{Dataset, Hyperparameters, LatentDraws, ModelState, OutcomeKind};
