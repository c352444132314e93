//! Independent product priors.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf, Normal as NormalCdf};
use statrs::function::gamma::ln_gamma;

use crate::error::{param, Result};
use crate::numerics::RandomStream;

/// One-dimensional prior factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    /// Shape / scale parameterization (mean = shape · scale).
    Gamma { shape: f64, scale: f64 },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Normal { std, .. } if !(std > 0.0) => param("normal std must be positive"),
            Marginal::Uniform { low, high } if !(high > low) => param("uniform needs low < high"),
            Marginal::Gamma { shape, scale } if !(shape > 0.0 && scale > 0.0) => {
                param("gamma shape and scale must be positive")
            }
            _ => Ok(()),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => {
                let z = (x - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Marginal::Uniform { low, high } => {
                if (low..=high).contains(&x) {
                    -(high - low).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::Gamma { shape, scale } => {
                if x > 0.0 {
                    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            Marginal::Uniform { low, high } => low + (high - low) * rng.uniform(),
            Marginal::Gamma { shape, scale } => {
                Gamma::new(shape, scale).expect("validated gamma").sample(rng)
            }
        }
    }

    /// Probability mass on `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, std } => {
                let d = NormalCdf::new(mean, std).expect("validated normal");
                d.cdf(b) - d.cdf(a)
            }
            Marginal::Uniform { low, high } => {
                ((b.min(high) - a.max(low)) / (high - low)).clamp(0.0, 1.0)
            }
            Marginal::Gamma { shape, scale } => {
                let d = GammaCdf::new(shape, 1.0 / scale).expect("validated gamma");
                d.cdf(b.max(0.0)) - d.cdf(a.max(0.0))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Uniform { low, high } => 0.5 * (low + high),
            Marginal::Gamma { shape, scale } => shape * scale,
        }
    }
}

/// Product of independent marginals, one per parameter coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    marginals: Vec<Marginal>,
}

impl Prior {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return param("prior needs at least one coordinate");
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    /// Prior over the first `k` coordinates only.
    pub fn leading(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim() {
            return param(format!("cannot take {k} leading coordinates of a {}-d prior", self.dim()));
        }
        Self::new(self.marginals[..k].to_vec())
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        self.marginals.iter().zip(theta).map(|(m, &x)| m.log_density(x)).sum()
    }

    /// One draw, coordinates in order.
    pub fn sample(&self, rng: &mut RandomStream) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }

    /// Prior mass inside an axis-aligned box.
    pub fn mass_in_box(&self, bounds: &[(f64, f64)]) -> f64 {
        self.marginals.iter().zip(bounds).map(|(m, &(a, b))| m.mass_between(a, b)).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn densities() {
        let n = Marginal::Normal { mean: 1.0, std: 0.1 };
        assert_relative_eq!(n.log_density(1.0), -(0.1f64.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln());
        let u = Marginal::Uniform { low: 0.0, high: 10.0 };
        assert_relative_eq!(u.log_density(3.0), -(10f64.ln()));
        assert_eq!(u.log_density(11.0), f64::NEG_INFINITY);
        // exponential with mean 0.1
        let g = Marginal::Gamma { shape: 1.0, scale: 0.1 };
        assert_relative_eq!(g.log_density(0.2), 10f64.ln() - 2.0, max_relative = 1e-12);
        assert_eq!(g.log_density(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_marginals_rejected() {
        assert!(Prior::new(vec![Marginal::Normal { mean: 0.0, std: 0.0 }]).is_err());
        assert!(Prior::new(vec![Marginal::Uniform { low: 1.0, high: 1.0 }]).is_err());
        assert!(Prior::new(vec![]).is_err());
    }

    #[test]
    fn sample_moments() {
        let p = Prior::new(vec![
            Marginal::Normal { mean: 1.0, std: 0.1 },
            Marginal::Gamma { shape: 60.0, scale: 1.0 / 60.0 },
        ])
        .unwrap();
        let mut rng = RandomStream::new(3);
        let n = 100_000;
        let (mut m0, mut m1) = (0.0, 0.0);
        for _ in 0..n {
            let t = p.sample(&mut rng);
            m0 += t[0];
            m1 += t[1];
        }
        assert!((m0 / n as f64 - 1.0).abs() < 0.002);
        assert!((m1 / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn box_mass() {
        let p = Prior::new(vec![Marginal::Normal { mean: 1.0, std: 0.1 }]).unwrap();
        let m = p.mass_in_box(&[(0.5, 1.5)]);
        assert!((m - (1.0 - 5.733e-7)).abs() < 1e-9);
        let u = Prior::new(vec![Marginal::Uniform { low: 0.0, high: 10.0 }]).unwrap();
        assert_relative_eq!(u.mass_in_box(&[(-1.0, 5.0)]), 0.5);
    }
}
