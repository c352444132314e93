//! Source inversion for the 1-D wave equation on an unbounded line, observed
//! by a row of receivers and compared through a Wasserstein likelihood.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::deviance::{fmt_f64, PriorEnsemble};
use crate::error::{param, Result};
use crate::likelihood::{wasserstein2_1d, Dataset, Distance, Evaluation, ExponentialLikelihood, LikelihoodModel};
use crate::numerics::RandomStream;
use crate::prior::{Marginal, Prior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example2Config {
    pub receivers: Vec<f64>,
    #[serde(alias = "T")]
    pub t_final: f64,
    pub n_t: usize,
    /// True `(x₀, a)`.
    pub theta_t: [f64; 2],
    pub noise_shape: f64,
    pub noise_scale: f64,
    /// Additive noise is uniform on `[−w, w]`.
    pub additive_half_width: f64,
    pub noiseless: bool,
    pub x0_range: [f64; 2],
    pub a_range: [f64; 2],
    pub s_shape: f64,
    pub s_scale: f64,
}

impl Default for Example2Config {
    fn default() -> Self {
        Self {
            receivers: (-3..=3).map(f64::from).collect(),
            t_final: 5.0,
            n_t: 101,
            theta_t: [0.0, 0.5],
            noise_shape: 60.0,
            noise_scale: 1.0 / 60.0,
            additive_half_width: 0.25,
            noiseless: false,
            x0_range: [-1.0, 1.0],
            a_range: [0.0, 1.0],
            s_shape: 1.0,
            s_scale: 0.1,
        }
    }
}

impl Example2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 {
            return param("n_t must be at least 2");
        }
        if self.receivers.is_empty() {
            return param("at least one receiver is required");
        }
        let mut r = self.receivers.clone();
        r.sort_by(f64::total_cmp);
        if r.windows(2).any(|w| w[0] == w[1]) {
            return param("receiver locations must be distinct");
        }
        if !(self.t_final > 0.0) {
            return param("T must be positive");
        }
        if !(self.noise_shape > 0.0 && self.noise_scale > 0.0 && self.additive_half_width >= 0.0) {
            return param("noise parameters must be positive");
        }
        self.prior().map(|_| ())
    }

    /// `t_k = (k−1) T / (N_T − 1)`
    pub fn times(&self) -> Vec<f64> {
        let step = self.t_final / (self.n_t - 1) as f64;
        (0..self.n_t).map(|k| k as f64 * step).collect()
    }

    /// Receiver signals for source parameters `(x₀, a)`.
    pub fn signals(&self, x0: f64, a: f64) -> Vec<Vec<f64>> {
        let times = self.times();
        self.receivers
            .iter()
            .map(|&x| times.iter().map(|&t| ex2_forward(t, x, x0, a)).collect())
            .collect()
    }

    /// Independent prior over `(x₀, a, s)`.
    pub fn prior(&self) -> Result<Prior> {
        Prior::new(vec![
            Marginal::Uniform { low: self.x0_range[0], high: self.x0_range[1] },
            Marginal::Uniform { low: self.a_range[0], high: self.a_range[1] },
            Marginal::Gamma { shape: self.s_shape, scale: self.s_scale },
        ])
    }

    /// Likelihood over `(x₀, a)` at fixed dispersion `s`.
    pub fn conditioned_model(&self, data: &Dataset, s: f64) -> Result<ExponentialLikelihood> {
        if !(s > 0.0) {
            return param(format!("dispersion must be positive, got {s}"));
        }
        let cfg = self.clone();
        ExponentialLikelihood::new(
            data.clone(),
            2,
            Arc::new(move |theta: &[f64]| Ok(cfg.signals(theta[0], theta[1]))),
            Distance::Wasserstein2,
            s,
            self.n_t as f64 * s.ln(),
        )
    }
}

/// SIR (α = 1) weighted mean of `s` over a 3-D ensemble.
pub fn posterior_mean_s(ens: &PriorEnsemble) -> f64 {
    ens.log_weights(1.0).iter().zip(ens.thetas()).map(|(w, t)| w.exp() * t[2]).sum()
}

/// The `(x₀, a)` ensemble with log-likelihoods re-expressed at fixed `s`,
/// recovered from the cached values without new forward solves.
pub fn conditioned_ensemble(cfg: &Example2Config, ens: &PriorEnsemble, s: f64) -> Result<PriorEnsemble> {
    if !(s > 0.0) {
        return param(format!("dispersion must be positive, got {s}"));
    }
    let n_t = cfg.n_t as f64;
    let mut thetas = Vec::with_capacity(ens.len());
    let mut log_liks = Vec::with_capacity(ens.len());
    for (t, l) in ens.thetas().iter().zip(ens.log_liks()) {
        if t.len() != 3 {
            return param("expected (x0, a, s) ensemble members");
        }
        let distance = (n_t * t[2].ln() - l) / t[2];
        thetas.push(t[..2].to_vec());
        log_liks.push(n_t * s.ln() - s * distance);
    }
    PriorEnsemble::from_parts(thetas, log_liks, ens.seed())
}

/// `u⁰(x) = a Σ_{δ∈{−½,0,½}} exp(−100 (x − x₀ + δ)²)`
pub fn ex2_initial_pulse(x: f64, x0: f64, a: f64) -> f64 {
    let bump = |d: f64| (-100.0 * d * d).exp();
    a * (bump(x - x0 - 0.5) + bump(x - x0) + bump(x - x0 + 0.5))
}

/// d'Alembert solution with zero initial velocity.
pub fn ex2_forward(t: f64, x: f64, x0: f64, a: f64) -> f64 {
    0.5 * ex2_initial_pulse(x - t, x0, a) + 0.5 * ex2_initial_pulse(x + t, x0, a)
}

/// Noisy receiver records `ε⁽¹⁾ g + ε⁽²⁾`.
pub fn ex2_generate_data(cfg: &Example2Config, theta_t: [f64; 2], stream: &mut RandomStream) -> Result<Dataset> {
    cfg.validate()?;
    let mut channels = cfg.signals(theta_t[0], theta_t[1]);
    if !cfg.noiseless {
        let gamma = Gamma::new(cfg.noise_shape, cfg.noise_scale).expect("validated gamma");
        let w = cfg.additive_half_width;
        for c in &mut channels {
            for v in c.iter_mut() {
                let e1 = gamma.sample(stream);
                let e2 = -w + 2.0 * w * stream.uniform();
                *v = e1 * *v + e2;
            }
        }
    }
    Dataset::with_times(channels, cfg.times())
}

/// Dataset CSV with header `receiver,t,y`; `receiver` is the location.
pub fn dataset_csv(cfg: &Example2Config, data: &Dataset) -> String {
    let times = cfg.times();
    let mut out = String::from("receiver,t,y\n");
    for (x, c) in cfg.receivers.iter().zip(data.channels()) {
        for (t, y) in times.iter().zip(c) {
            let _ = writeln!(out, "{},{},{}", fmt_f64(*x), fmt_f64(*t), fmt_f64(*y));
        }
    }
    out
}

/// `log p = N_T log s − s Σ_r W₂²(y_r, g_r(x₀, a))` over `(x₀, a, s)`.
#[derive(Debug)]
pub struct Example2Model {
    cfg: Example2Config,
    data: Dataset,
    evals: AtomicU64,
}

impl Example2Model {
    pub fn new(cfg: &Example2Config, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.len() != cfg.receivers.len() || data.channels().iter().any(|c| c.len() != cfg.n_t) {
            return param("dataset shape does not match the receiver layout");
        }
        Ok(Self { cfg: cfg.clone(), data, evals: AtomicU64::new(0) })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// `Σ_r W₂²(y_r, g_r)`; one forward solve.
    pub fn total_distance(&self, x0: f64, a: f64) -> Result<f64> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let g = self.cfg.signals(x0, a);
        let mut total = 0.0;
        for (y, g) in self.data.channels().iter().zip(&g) {
            total += wasserstein2_1d(y, g)?;
        }
        Ok(total)
    }
}

impl LikelihoodModel for Example2Model {
    fn dim(&self) -> usize {
        3
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        if theta.len() != 3 {
            return param(format!("expected (x0, a, s), got {} values", theta.len()));
        }
        let s = theta[2];
        let log_likelihood = if s > 0.0 {
            self.cfg.n_t as f64 * s.ln() - s * self.total_distance(theta[0], theta[1])?
        } else {
            f64::NEG_INFINITY
        };
        Ok(Evaluation { log_likelihood, residual: None })
    }

    fn forward_evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::log_likelihood;
    use approx::assert_relative_eq;

    #[test]
    fn pulse_values() {
        assert_relative_eq!(ex2_initial_pulse(0.3, 0.3, 0.5), 0.5 * (1.0 + 2.0 * (-25.0f64).exp()));
        assert_eq!(ex2_initial_pulse(0.1, 0.0, 0.0), 0.0);
        for d in [0.05, 0.3, 0.7] {
            assert_relative_eq!(ex2_initial_pulse(0.2 + d, 0.2, 1.0), ex2_initial_pulse(0.2 - d, 0.2, 1.0));
        }
    }

    #[test]
    fn forward_properties() {
        for x in [-1.0, 0.0, 0.4] {
            assert_relative_eq!(ex2_forward(0.0, x, 0.1, 0.5), ex2_initial_pulse(x, 0.1, 0.5));
            assert_relative_eq!(ex2_forward(1.3, x, 0.1, 1.0), 2.0 * ex2_forward(1.3, x, 0.1, 0.5));
        }
        let t = 3.0;
        let want = 0.5 * ex2_initial_pulse(-t, 0.0, 0.5) + 0.5 * ex2_initial_pulse(t, 0.0, 0.5);
        assert_relative_eq!(ex2_forward(t, 0.0, 0.0, 0.5), want);
    }

    #[test]
    fn noiseless_data_is_exact() {
        let cfg = Example2Config { noiseless: true, n_t: 21, ..Default::default() };
        let d = ex2_generate_data(&cfg, [0.0, 0.5], &mut RandomStream::new(0)).unwrap();
        assert_eq!(d.channels(), cfg.signals(0.0, 0.5).as_slice());
        assert_eq!(d.times().unwrap().last(), Some(&5.0));
    }

    #[test]
    fn noisy_data_stays_in_band() {
        // with a = 0 the record is pure additive noise
        let cfg = Example2Config { n_t: 1001, ..Default::default() };
        let d = ex2_generate_data(&cfg, [0.0, 0.0], &mut RandomStream::new(3)).unwrap();
        assert!(d.channels().iter().flatten().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn multiplicative_noise_mean() {
        let g = Gamma::new(60.0, 1.0 / 60.0).unwrap();
        let mut s = RandomStream::new(11);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| g.sample(&mut s)).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 0.01);
    }

    #[test]
    fn likelihood_identities() {
        let cfg = Example2Config { noiseless: true, n_t: 31, ..Default::default() };
        let exact = ex2_generate_data(&cfg, [0.0, 0.5], &mut RandomStream::new(0)).unwrap();
        let m = Example2Model::new(&cfg, exact).unwrap();
        assert_relative_eq!(log_likelihood(&m, &[0.0, 0.5, 2.0]).unwrap(), 31.0 * 2f64.ln());
        let d = m.total_distance(0.3, 0.4).unwrap();
        assert!(d > 0.0);
        assert_relative_eq!(log_likelihood(&m, &[0.3, 0.4, 1.0]).unwrap(), -d, max_relative = 1e-12);
        let l1 = log_likelihood(&m, &[0.3, 0.4, 0.7]).unwrap();
        let l2 = log_likelihood(&m, &[0.3, 0.4, 1.4]).unwrap();
        assert_relative_eq!(l2 - l1, 31.0 * 2f64.ln() - 0.7 * d, max_relative = 1e-12);
        assert_eq!(log_likelihood(&m, &[0.3, 0.4, 0.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn conditioned_model_agrees() {
        let cfg = Example2Config { n_t: 41, ..Default::default() };
        let data = ex2_generate_data(&cfg, [0.0, 0.5], &mut RandomStream::new(1)).unwrap();
        let full = Example2Model::new(&cfg, data.clone()).unwrap();
        let cond = cfg.conditioned_model(&data, 0.37).unwrap();
        assert_relative_eq!(
            log_likelihood(&full, &[0.2, 0.6, 0.37]).unwrap(),
            log_likelihood(&cond, &[0.2, 0.6]).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn conditioned_ensemble_matches_direct_evaluation() {
        let cfg = Example2Config { n_t: 41, ..Default::default() };
        let data = ex2_generate_data(&cfg, [0.0, 0.5], &mut RandomStream::new(1)).unwrap();
        let full = Example2Model::new(&cfg, data.clone()).unwrap();
        let prior = cfg.prior().unwrap();
        let ens = crate::deviance::build_ensemble(&prior, &full, 20, &mut RandomStream::new(2)).unwrap();
        let s = posterior_mean_s(&ens);
        assert!(s > 0.0);
        let cond = conditioned_ensemble(&cfg, &ens, s).unwrap();
        let direct = cfg.conditioned_model(&data, s).unwrap();
        for (t, l) in cond.thetas().iter().zip(cond.log_liks()) {
            assert_relative_eq!(*l, log_likelihood(&direct, t).unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(Example2Config { n_t: 1, ..Default::default() }.validate().is_err());
        assert!(Example2Config { receivers: vec![0.0, 0.0], ..Default::default() }.validate().is_err());
    }
}
