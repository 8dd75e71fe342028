//! Threshold autoregression with AR(1) colored noise.
//!
//! The observed chain is `X_j = f(X_{j-1}, θ) + ξ_{j-1} + ε_j` where the drift
//! coefficient switches between ρ⁺ and ρ⁻ at the threshold θ and ξ is a hidden
//! Gaussian AR(1) process. The crate provides
//!
//! - [`model`]: parameters and path simulation,
//! - [`filter`]: the steady-state Kalman filter and exact log-likelihood,
//! - [`estimators`]: the piecewise-constant likelihood profile in θ with the
//!   Bayes, central ML and pseudo-ML threshold estimators,
//! - [`limit`]: the compound Poisson limit experiment for n(θ̃_n − θ₀),
//! - [`montecarlo`]: reproducible parallel experiments and diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod csvio;
pub mod error;
pub mod estimators;
pub mod filter;
pub mod limit;
pub mod model;
pub mod montecarlo;
pub mod rng;

pub use error::{Error, Result};
pub use estimators::{
    bayes_estimate, build_profile, central_mle, pseudo_mle, EstimatorKind, EstimatorResult,
    LikelihoodProfile, Prior, TabulatedDensity,
};
pub use filter::{riccati_iterate, run_filter, solve_gamma, FilterRun, SteadyState};
pub use limit::{
    beta_squared, beta_squared_series, estimate_varpi, simulate_z, u_hat, u_tilde, DensityEstimate,
    LimitLaw, ZPath,
};
pub use model::{
    drift, simulate_path, simulate_path_with, PathSample, SimOptions, TarParams, ThetaSpace,
};
pub use montecarlo::{
    diag_interval_bound, diag_mixing, ks_compare, run_finite_mc, run_limit_mc, McConfig, McSummary,
};
