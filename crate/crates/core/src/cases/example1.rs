//! `y = Aθ + ε`, `ε ~ N(0, σ_ε²)`, `θ ~ N(μ_p, σ_p²)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::StandardNormal;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deviance::{fmt_f64, Tractile};
use crate::error::{param, Result};
use crate::likelihood::{Dataset, Distance, ExponentialLikelihood};
use crate::numerics::{RandomStream, SignedLogValue};
use crate::prior::{Marginal, Prior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example1Config {
    #[serde(alias = "A")]
    pub a: f64,
    pub sigma_p2: f64,
    pub sigma_eps2: f64,
    pub mu_p: f64,
    pub theta_t: f64,
}

impl Default for Example1Config {
    fn default() -> Self {
        Self { a: 101.0, sigma_p2: 1e-2, sigma_eps2: 4.0, mu_p: 1.0, theta_t: 1.1 }
    }
}

impl Example1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p2 > 0.0 && self.sigma_eps2 > 0.0) {
            return param("example 1 variances must be positive");
        }
        if ![self.a, self.mu_p, self.theta_t].iter().all(|v| v.is_finite()) {
            return param("example 1 parameters must be finite");
        }
        Ok(())
    }

    /// `σ_α² = A²σ_p²α + σ_ε²`
    pub fn sigma_alpha2(&self, alpha: f64) -> f64 {
        self.a * self.a * self.sigma_p2 * alpha + self.sigma_eps2
    }

    /// Dispersion `s = 1/(2σ_ε²)`.
    pub fn dispersion(&self) -> f64 {
        0.5 / self.sigma_eps2
    }

    pub fn log_c(&self) -> f64 {
        -0.5 * (2.0 * PI * self.sigma_eps2).ln()
    }

    pub fn prior(&self) -> Result<Prior> {
        Prior::new(vec![Marginal::Normal { mean: self.mu_p, std: self.sigma_p2.sqrt() }])
    }

    /// Likelihood for a single observation `y`.
    pub fn model(&self, y: f64) -> Result<ExponentialLikelihood> {
        self.validate()?;
        let a = self.a;
        ExponentialLikelihood::new(
            Dataset::new(vec![vec![y]])?,
            1,
            Arc::new(move |theta: &[f64]| Ok(vec![vec![a * theta[0]]])),
            Distance::SquaredEuclidean,
            self.dispersion(),
            self.log_c(),
        )
    }

    /// One synthetic observation `Aθ_t + ε`.
    pub fn generate_data(&self, stream: &mut RandomStream) -> f64 {
        let e: f64 = stream.sample(StandardNormal);
        self.a * self.theta_t + self.sigma_eps2.sqrt() * e
    }
}

/// `Φ₁(α)` in closed form.
pub fn ex1_analytic_deviance(cfg: &Example1Config, y: f64, alpha: f64) -> f64 {
    let v = cfg.sigma_alpha2(alpha);
    let r = y - cfg.a * cfg.mu_p;
    -0.5 * ((2.0 * PI * cfg.sigma_eps2).ln()
        + cfg.a * cfg.a * cfg.sigma_p2 / v
        + r * r * cfg.sigma_eps2 / (v * v))
}

/// `log z(α) = log E_π[p^α]` in closed form.
pub fn ex1_log_evidence(cfg: &Example1Config, y: f64, alpha: f64) -> f64 {
    let v = cfg.sigma_alpha2(alpha);
    let r = y - cfg.a * cfg.mu_p;
    -0.5 * alpha * (2.0 * PI * cfg.sigma_eps2).ln() + 0.5 * (cfg.sigma_eps2 / v).ln()
        - 0.5 * alpha * r * r / v
}

/// `h(α) = z(α) Φ₁(α)`.
pub fn ex1_analytic_tractile(cfg: &Example1Config, y: f64, alpha: f64) -> f64 {
    ex1_log_evidence(cfg, y, alpha).exp() * ex1_analytic_deviance(cfg, y, alpha)
}

/// Mean and variance of the Gaussian transition density at `α`.
pub fn ex1_conjugate_transition(cfg: &Example1Config, y: f64, alpha: f64) -> (f64, f64) {
    let precision = 1.0 / cfg.sigma_p2 + alpha * cfg.a * cfg.a / cfg.sigma_eps2;
    let var = 1.0 / precision;
    (var * (cfg.mu_p / cfg.sigma_p2 + alpha * cfg.a * y / cfg.sigma_eps2), var)
}

/// Closed-form tractile source, a drop-in replacement for a prior ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticTractile {
    pub cfg: Example1Config,
    pub y: f64,
}

impl Tractile for AnalyticTractile {
    fn tractile(&self, alpha: f64) -> Result<SignedLogValue> {
        let phi = ex1_analytic_deviance(&self.cfg, self.y, alpha);
        Ok(SignedLogValue::from_f64(phi).scale_exp(ex1_log_evidence(&self.cfg, self.y, alpha)))
    }

    fn log_mean_power(&self, alpha: f64) -> Result<f64> {
        Ok(ex1_log_evidence(&self.cfg, self.y, alpha))
    }
}

/// Dataset CSV with header `y`.
pub fn dataset_csv(ys: &[f64]) -> String {
    let mut out = String::from("y\n");
    for y in ys {
        out.push_str(&fmt_f64(*y));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn deviance_reference_values() {
        let c = Example1Config::default();
        assert!((ex1_analytic_deviance(&c, 101.0, 0.0) + 14.3633).abs() < 1e-4);
        assert!((ex1_analytic_deviance(&c, 101.0, 1.0) + 2.0932).abs() < 1e-4);
    }

    #[test]
    fn degenerate_prior_limit() {
        let c = Example1Config { sigma_p2: 1e-14, ..Default::default() };
        let want = -0.5 * ((8.0 * PI).ln() + 9.0 / 4.0);
        for a in [0.0, 0.5, 1.0] {
            assert_relative_eq!(ex1_analytic_deviance(&c, 104.0, a), want, max_relative = 1e-9);
        }
    }

    #[test]
    fn tractile_at_zero_is_deviance() {
        let c = Example1Config::default();
        assert_relative_eq!(ex1_analytic_tractile(&c, 107.0, 0.0), ex1_analytic_deviance(&c, 107.0, 0.0));
    }

    #[test]
    fn evidence_derivative_is_deviance() {
        let c = Example1Config::default();
        let d = 1e-5;
        for a in [0.2, 0.5, 0.9] {
            let fd = (ex1_log_evidence(&c, 108.0, a + d) - ex1_log_evidence(&c, 108.0, a - d)) / (2.0 * d);
            assert_relative_eq!(fd, ex1_analytic_deviance(&c, 108.0, a), max_relative = 1e-7);
        }
    }

    #[test]
    fn conjugate_values() {
        let c = Example1Config::default();
        assert_eq!(ex1_conjugate_transition(&c, 50.0, 0.0), (1.0, 0.01));
        let (m, v) = ex1_conjugate_transition(&c, 111.1, 1.0);
        // 1/(100 + 2550.25) and (100 + 101·111.1/4)/(100 + 2550.25)
        assert_relative_eq!(v, 3.773228940665975e-4, max_relative = 1e-12);
        assert_relative_eq!(m, 1.0962267710593339, max_relative = 1e-12);
        assert_relative_eq!(ex1_conjugate_transition(&c, 101.0, 1.0).0, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn model_matches_gaussian_density() {
        let c = Example1Config::default();
        let m = c.model(105.0).unwrap();
        let ll = crate::likelihood::log_likelihood(&m, &[1.02]).unwrap();
        let r: f64 = 105.0 - 101.0 * 1.02;
        assert_relative_eq!(ll, -0.5 * (8.0 * PI).ln() - r * r / 8.0, max_relative = 1e-14);
    }

    #[test]
    fn config_json_defaults() {
        let c: Example1Config = serde_json::from_str(r#"{"A": 50.0}"#).unwrap();
        assert_eq!(c.a, 50.0);
        assert_eq!(c.sigma_eps2, 4.0);
        assert!(serde_json::from_str::<Example1Config>(r#"{"bogus": 1}"#).is_err());
    }
}
