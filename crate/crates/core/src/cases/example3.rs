//! Bivariate multimodal problem on `[0, 10]²`.
//!
//! Data are drawn from a Gaussian mixture around a set of modes. The
//! likelihood is the data-kernel mixture
//! `p(Y|θ) = (1/N) Σ_i N(y_i; θ, σ² I₂)`, which has a bump at every data
//! cluster; more data resolve more of the modes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::deviance::fmt_f64;
use crate::error::{param, Result};
use crate::likelihood::{Dataset, Evaluation, LikelihoodModel};
use crate::numerics::{log_mean_exp, RandomStream};
use crate::posterior::{local_maxima_2d, GriddedDensity};
use crate::prior::{Marginal, Prior};

/// Modes for the twenty-mode run.
pub const TWENTY_MODES: [[f64; 2]; 20] = [
    [2.18, 5.76],
    [8.67, 9.59],
    [4.24, 8.48],
    [8.41, 1.68],
    [3.93, 8.82],
    [3.25, 3.47],
    [1.70, 0.50],
    [4.59, 5.60],
    [6.91, 5.81],
    [6.87, 5.40],
    [5.41, 2.65],
    [2.70, 7.88],
    [4.98, 3.70],
    [1.14, 2.39],
    [8.33, 9.50],
    [4.93, 1.50],
    [1.83, 0.09],
    [2.26, 0.31],
    [5.54, 6.86],
    [1.69, 8.11],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example3Config {
    pub modes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub sigma2: f64,
    pub n_data: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for Example3Config {
    fn default() -> Self {
        Self {
            modes: vec![[2.18, 5.76], [8.41, 1.68], [5.54, 6.86]],
            weights: vec![0.3, 0.5, 0.2],
            sigma2: 0.01,
            n_data: 1000,
            low: 0.0,
            high: 10.0,
        }
    }
}

impl Example3Config {
    /// Twenty equally weighted modes.
    pub fn twenty_modes() -> Self {
        Self { modes: TWENTY_MODES.to_vec(), weights: vec![0.05; 20], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.len() != self.weights.len() {
            return param("need one weight per mode");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return param("mode weights must be non-negative and sum to 1");
        }
        if !(self.high > self.low) {
            return param("prior box needs low < high");
        }
        if self.modes.iter().flatten().any(|&m| !(self.low..=self.high).contains(&m)) {
            return param("modes must lie inside the prior box");
        }
        if !(self.sigma2 >= 0.0) {
            return param("sigma2 must be non-negative");
        }
        Ok(())
    }

    /// Uniform prior on the box, both coordinates.
    pub fn prior(&self) -> Result<Prior> {
        let u = Marginal::Uniform { low: self.low, high: self.high };
        Prior::new(vec![u, u])
    }
}

/// `n_data` points: a categorical mode draw, then a Gaussian around it.
pub fn ex3_generate_data(cfg: &Example3Config, stream: &mut RandomStream) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.n_data == 0 {
        return param("n_data must be at least 1");
    }
    let sd = cfg.sigma2.sqrt();
    let mut points = Vec::with_capacity(cfg.n_data);
    for _ in 0..cfg.n_data {
        let u = stream.uniform();
        let mut acc = 0.0;
        let mut m = cfg.modes.len() - 1;
        for (k, w) in cfg.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                m = k;
                break;
            }
        }
        let z0: f64 = stream.sample(StandardNormal);
        let z1: f64 = stream.sample(StandardNormal);
        points.push(vec![cfg.modes[m][0] + sd * z0, cfg.modes[m][1] + sd * z1]);
    }
    Dataset::new(points)
}

/// Dataset CSV with header `y1,y2`.
pub fn dataset_csv(data: &Dataset) -> String {
    let mut out = String::from("y1,y2\n");
    for p in data.channels() {
        let _ = writeln!(out, "{},{}", fmt_f64(p[0]), fmt_f64(p[1]));
    }
    out
}

/// Data-kernel mixture likelihood.
#[derive(Debug)]
pub struct Example3Model {
    data: Dataset,
    sigma2: f64,
    evals: AtomicU64,
}

impl Example3Model {
    pub fn new(cfg: &Example3Config, data: Dataset) -> Result<Self> {
        if !(cfg.sigma2 > 0.0) {
            return param("the likelihood needs sigma2 > 0");
        }
        if data.channels().iter().any(|p| p.len() != 2) {
            return param("example 3 data are 2-D points");
        }
        Ok(Self { data, sigma2: cfg.sigma2, evals: AtomicU64::new(0) })
    }
}

impl LikelihoodModel for Example3Model {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        if theta.len() != 2 {
            return param(format!("expected 2 parameters, got {}", theta.len()));
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        let terms: Vec<f64> = self
            .data
            .channels()
            .iter()
            .map(|y| {
                let (d0, d1) = (theta[0] - y[0], theta[1] - y[1]);
                -(d0 * d0 + d1 * d1) / (2.0 * self.sigma2)
            })
            .collect();
        let log_likelihood = log_mean_exp(&terms) - (2.0 * PI * self.sigma2).ln();
        Ok(Evaluation { log_likelihood, residual: None })
    }

    fn forward_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

/// Detected maxima and which reference modes they capture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapturedModes {
    pub maxima: Vec<[f64; 2]>,
    /// Per reference mode: a detected maximum lies within the radius.
    pub captured: Vec<bool>,
}

impl CapturedModes {
    /// Local maxima of `density` above `rel_height` × global maximum, matched
    /// to `modes` within `radius`.
    pub fn detect(density: &GriddedDensity, modes: &[[f64; 2]], rel_height: f64, radius: f64) -> Self {
        let maxima: Vec<[f64; 2]> =
            local_maxima_2d(density, rel_height).into_iter().map(|(p, _)| [p[0], p[1]]).collect();
        let captured = modes
            .iter()
            .map(|m| maxima.iter().any(|p| (p[0] - m[0]).hypot(p[1] - m[1]) <= radius))
            .collect();
        Self { maxima, captured }
    }

    pub fn count(&self) -> usize {
        self.captured.iter().filter(|&&c| c).count()
    }
}
