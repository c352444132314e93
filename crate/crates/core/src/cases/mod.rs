//! The three worked case studies: a linear-Gaussian model with closed-form
//! oracles, a 1-D wave-equation source inversion with a Wasserstein
//! likelihood, and a bivariate multimodal problem.

pub mod example1;
pub mod example2;
pub mod example3;

pub use example1::{
    ex1_analytic_deviance, ex1_analytic_tractile, ex1_conjugate_transition, ex1_log_evidence,
    AnalyticTractile, Example1Config,
};
pub use example2::{
    conditioned_ensemble, ex2_forward, ex2_generate_data, ex2_initial_pulse, Example2Config, Example2Model,
    posterior_mean_s,
};
pub use example3::{ex3_generate_data, CapturedModes, Example3Config, Example3Model};
