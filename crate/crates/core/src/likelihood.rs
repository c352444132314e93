//! Quadratic distances and exponential-type likelihoods
//! `p(Y|θ) = C · exp(−s · dis(Y, g(θ)))`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Additive floor applied to every bin before a signal is read as a mass.
pub const WASSERSTEIN_FLOOR: f64 = 1e-12;

/// `Σ (uᵢ − vᵢ)²`
pub fn sq_euclidean(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return param(format!("length mismatch: {} vs {}", u.len(), v.len()));
    }
    Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Squared 2-Wasserstein distance between two signals sampled on a common
/// uniform grid with unit spacing.
///
/// Both signals are shifted by the same constant (the smallest sample of
/// either), floored by [`WASSERSTEIN_FLOOR`] and normalized to unit mass; the
/// two discrete quantile functions are then matched exactly.
pub fn wasserstein2_1d(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return param(format!("length mismatch: {} vs {}", u.len(), v.len()));
    }
    if u.is_empty() {
        return param("signals must be non-empty");
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite sample in Wasserstein input".into()));
    }
    let shift = u.iter().chain(v).copied().fold(f64::INFINITY, f64::min);
    let p = to_mass(u, shift)?;
    let q = to_mass(v, shift)?;

    // p and q are each consumed bin by bin; every transported chunk moves
    // between bin i and bin j at cost (i − j)².
    let n = p.len();
    let (mut i, mut j) = (0usize, 0usize);
    let (mut rp, mut rq) = (p[0], q[0]);
    let mut cost = 0.0;
    while i < n && j < n {
        let m = rp.min(rq);
        let d = i as f64 - j as f64;
        cost += m * d * d;
        rp -= m;
        rq -= m;
        if rp <= rq {
            i += 1;
            if i < n {
                rp = p[i];
            }
        } else {
            j += 1;
            if j < n {
                rq = q[j];
            }
        }
    }
    Ok(cost)
}

fn to_mass(signal: &[f64], shift: f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = signal.iter().map(|x| x - shift + WASSERSTEIN_FLOOR).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!(
            "cannot normalize signal to a probability mass (total {total} after shift {shift})"
        )));
    }
    Ok(raw.into_iter().map(|x| x / total).collect())
}

/// Which quadratic distance a model uses between data and model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    SquaredEuclidean,
    Wasserstein2,
}

impl Distance {
    pub fn eval(self, u: &[f64], v: &[f64]) -> Result<f64> {
        match self {
            Distance::SquaredEuclidean => sq_euclidean(u, v),
            Distance::Wasserstein2 => wasserstein2_1d(u, v),
        }
    }
}

/// Observed data: one vector per channel (receiver signal or point datum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    channels: Vec<Vec<f64>>,
    times: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return param("dataset must contain at least one channel");
        }
        if channels.iter().any(|c| c.is_empty()) {
            return param("dataset channels must be non-empty");
        }
        Ok(Self { channels, times: None })
    }

    /// Channels sampled at common time stamps.
    pub fn with_times(channels: Vec<Vec<f64>>, times: Vec<f64>) -> Result<Self> {
        let mut d = Self::new(channels)?;
        if d.channels.iter().any(|c| c.len() != times.len()) {
            return param("every channel must have one value per time stamp");
        }
        d.times = Some(times);
        Ok(d)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Result of one forward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_likelihood: f64,
    /// Flattened `Y − g(θ)` when the distance is induced by the Euclidean
    /// inner product; used for kernel traces.
    pub residual: Option<Vec<f64>>,
}

/// A likelihood whose evaluation costs one forward-model solve.
pub trait LikelihoodModel: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation>;

    /// Forward solves performed so far.
    fn forward_evals(&self) -> u64;
}

/// `log p(Y|θ)` through `model`.
pub fn log_likelihood(model: &dyn LikelihoodModel, theta: &[f64]) -> Result<f64> {
    Ok(model.evaluate(theta)?.log_likelihood)
}

pub type ForwardFn = Arc<dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Send + Sync>;

/// `log p = log_C − s · Σ_r dis(y_r, g_r(θ))`.
pub struct ExponentialLikelihood {
    data: Dataset,
    forward: ForwardFn,
    distance: Distance,
    dispersion: f64,
    log_c: f64,
    dim: usize,
    evals: AtomicU64,
}

impl fmt::Debug for ExponentialLikelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExponentialLikelihood")
            .field("distance", &self.distance)
            .field("dispersion", &self.dispersion)
            .field("log_c", &self.log_c)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl ExponentialLikelihood {
    pub fn new(
        data: Dataset,
        dim: usize,
        forward: ForwardFn,
        distance: Distance,
        dispersion: f64,
        log_c: f64,
    ) -> Result<Self> {
        if !(dispersion > 0.0) {
            return param(format!("dispersion must be positive, got {dispersion}"));
        }
        if !log_c.is_finite() {
            return param("log_C must be finite");
        }
        Ok(Self { data, forward, distance, dispersion, log_c, dim, evals: AtomicU64::new(0) })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn log_c(&self) -> f64 {
        self.log_c
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    /// Model output `g(θ)`, one vector per data channel. Counts as a solve.
    pub fn outputs(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        if theta.len() != self.dim {
            return param(format!("expected {} parameters, got {}", self.dim, theta.len()));
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        let out = (self.forward)(theta)?;
        if out.len() != self.data.len() {
            return param(format!(
                "forward model produced {} channels for {} data channels",
                out.len(),
                self.data.len()
            ));
        }
        Ok(out)
    }

    /// `Σ_r dis(y_r, g_r)` for precomputed outputs.
    pub fn dis(&self, outputs: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (y, g) in self.data.channels().iter().zip(outputs) {
            total += self.distance.eval(y, g)?;
        }
        Ok(total)
    }
}

impl LikelihoodModel for ExponentialLikelihood {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let out = self.outputs(theta)?;
        let log_likelihood = self.log_c - self.dispersion * self.dis(&out)?;
        let residual = match self.distance {
            Distance::SquaredEuclidean => Some(
                self.data
                    .channels()
                    .iter()
                    .zip(&out)
                    .flat_map(|(y, g)| y.iter().zip(g).map(|(a, b)| a - b))
                    .collect(),
            ),
            Distance::Wasserstein2 => None,
        };
        Ok(Evaluation { log_likelihood, residual })
    }

    fn forward_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn distances_are_symmetric_and_nonnegative(
            pair in (1usize..24).prop_flat_map(|n| (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            ))
        ) {
            let (u, v) = pair;
            for d in [Distance::SquaredEuclidean, Distance::Wasserstein2] {
                let ab = d.eval(&u, &v).unwrap();
                let ba = d.eval(&v, &u).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
            }
        }
    }
}
