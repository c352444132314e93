//! Likelihood-tempering continuation for Bayesian parameter estimation.
//!
//! The posterior is reached through the family of power posteriors
//! `π(θ|Y;α) ∝ π(θ) p(Y|θ)^α`, `α ∈ [0, 1]`. Every transition density is
//! available in closed form once the expected deviance
//! `Φ₁(α) = E_{θ|Y;α}[log p(Y|θ)]` is known, and `Φ₁` itself follows from
//! prior-stage Monte Carlo alone:
//!
//! ```text
//! Φ₁(α) = h(α) / (1 + ∫₀^α h(τ) dτ),      h(α) = E_π[p^α log p]
//! ```
//!
//! The forward model is therefore evaluated exactly `N` times, once per prior
//! draw, regardless of how many tempering stages are requested.
//!
//! Module map:
//!
//! * [`numerics`]: tempering grids, composite Simpson, signed log-domain
//!   reductions and the seeded random stream.
//! * [`likelihood`]: distances and exponential-type likelihood models.
//! * [`prior`]: independent product priors.
//! * [`deviance`]: prior ensembles, the tractile function, the deviance curve,
//!   the moment generating function and higher moments.
//! * [`spectral`]: kernel traces and the trace ODE system.
//! * [`posterior`]: power-posterior evaluation on grids, samplers and the
//!   density algebra.
//! * [`cases`]: the three worked case studies with analytic oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cases;
pub mod deviance;
pub mod error;
pub mod likelihood;
pub mod numerics;
pub mod posterior;
pub mod prior;
pub mod spectral;

pub use error::{Error, Result};
