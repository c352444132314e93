//! Prior-stage estimation of the expected deviance.
//!
//! Forward evaluations happen only in [`build_ensemble`]. Everything downstream
//! (the tractile function `h(α) = E_π[p^α log p]`, its running integral
//! `ℏ(α)`, the expected deviance `Φ₁ = h / (1 + ℏ)`, the moment generating
//! function and the higher moments) reuses the cached log-likelihoods.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::numerics::{
    log_mean_exp, monotone_cubic, signed_lse_mean, simpson_integrate, RandomStream,
    SignedLogValue, TemperingGrid,
};
use crate::prior::Prior;

/// Relative size of `|1 + ℏ|` against `|ℏ|` below which the quadrature form of
/// the evidence is abandoned for the direct log-domain estimate.
pub const CANCELLATION_GUARD: f64 = 1e-6;

/// Anything that can report the tractile function and the log evidence
/// `log E_π[p^α]` at arbitrary `α`.
pub trait Tractile {
    /// `h(α) = E_π[p^α log p]` in signed log form.
    fn tractile(&self, alpha: f64) -> Result<SignedLogValue>;

    /// `log E_π[p^α]`.
    fn log_mean_power(&self, alpha: f64) -> Result<f64>;
}

/// `N` prior draws with their cached log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEnsemble {
    thetas: Vec<Vec<f64>>,
    log_liks: Vec<f64>,
    residuals: Option<Vec<Vec<f64>>>,
    seed: u64,
    forward_evals: u64,
}

impl PriorEnsemble {
    /// Ensemble from precomputed values (no forward solves are recorded).
    pub fn from_parts(thetas: Vec<Vec<f64>>, log_liks: Vec<f64>, seed: u64) -> Result<Self> {
        if thetas.len() != log_liks.len() {
            return param("thetas and log-likelihoods differ in length");
        }
        if log_liks.len() < 2 {
            return param("an ensemble needs at least two samples");
        }
        if let Some((index, &value)) = log_liks.iter().enumerate().find(|(_, l)| !l.is_finite()) {
            return Err(Error::NonFiniteLogLikelihood { index, value });
        }
        Ok(Self { thetas, log_liks, residuals: None, seed, forward_evals: 0 })
    }

    pub fn len(&self) -> usize {
        self.log_liks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_liks.is_empty()
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn log_liks(&self) -> &[f64] {
        &self.log_liks
    }

    /// Cached `Y − g(θ_n)`, present when the model's distance is Euclidean.
    pub fn residuals(&self) -> Option<&[Vec<f64>]> {
        self.residuals.as_deref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Forward solves spent building this ensemble.
    pub fn forward_evals(&self) -> u64 {
        self.forward_evals
    }

    /// Self-normalized weights `∝ p^α` in log form (sum of exp = 1).
    pub fn log_weights(&self, alpha: f64) -> Vec<f64> {
        let scaled: Vec<f64> = self.log_liks.iter().map(|l| alpha * l).collect();
        let norm = log_mean_exp(&scaled) + (self.len() as f64).ln();
        scaled.into_iter().map(|x| x - norm).collect()
    }
}

/// Draw `n` parameters from the prior and evaluate the likelihood once at each.
///
/// Draws are taken sequentially from `stream`; the forward solves may run in
/// parallel but results are kept in sample order.
pub fn build_ensemble(
    prior: &Prior,
    model: &dyn LikelihoodModel,
    n: usize,
    stream: &mut RandomStream,
) -> Result<PriorEnsemble> {
    if n < 2 {
        return param(format!("ensemble size must be at least 2, got {n}"));
    }
    if prior.dim() != model.dim() {
        return param(format!("prior has {} coordinates, model {}", prior.dim(), model.dim()));
    }
    let thetas: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(stream)).collect();
    let before = model.forward_evals();
    let evals: Vec<Result<_>> = thetas.par_iter().map(|t| model.evaluate(t)).collect();
    let forward_evals = model.forward_evals() - before;

    let mut log_liks = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for (index, e) in evals.into_iter().enumerate() {
        let e = e?;
        if !e.log_likelihood.is_finite() {
            return Err(Error::NonFiniteLogLikelihood { index, value: e.log_likelihood });
        }
        log_liks.push(e.log_likelihood);
        residuals.push(e.residual);
    }
    let residuals = residuals.into_iter().collect::<Option<Vec<_>>>();
    Ok(PriorEnsemble { thetas, log_liks, residuals, seed: stream.seed(), forward_evals })
}

/// `h(α) ≈ (1/N) Σ_n e^{α ℓ_n} ℓ_n`, accumulated in signed log form.
pub fn tractile_h(ens: &PriorEnsemble, alpha: f64) -> f64 {
    tractile_signed(ens, alpha).to_f64()
}

fn tractile_signed(ens: &PriorEnsemble, alpha: f64) -> SignedLogValue {
    let terms: Vec<SignedLogValue> = ens
        .log_liks
        .iter()
        .map(|&l| SignedLogValue::from_f64(l).scale_exp(alpha * l))
        .collect();
    signed_lse_mean(&terms).expect("ensemble is non-empty")
}

impl Tractile for PriorEnsemble {
    fn tractile(&self, alpha: f64) -> Result<SignedLogValue> {
        Ok(tractile_signed(self, alpha))
    }

    fn log_mean_power(&self, alpha: f64) -> Result<f64> {
        let scaled: Vec<f64> = self.log_liks.iter().map(|l| alpha * l).collect();
        Ok(log_mean_exp(&scaled))
    }
}

/// Expected deviance on a tempering grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DevianceCurve {
    grid: TemperingGrid,
    h: Vec<f64>,
    hbar: Vec<f64>,
    phi1: Vec<f64>,
    log_z: Vec<f64>,
    log_z_direct: Vec<f64>,
    guarded: Vec<usize>,
}

/// Run the tempering recursion: `h` at every gridpoint and Simpson node,
/// `ℏ(α_k) = ℏ(α_{k−1}) + ∫ h`, and `Φ₁(α_k) = h(α_k) / (1 + ℏ(α_k))`.
///
/// Where `1 + ℏ` cancels (or the quadrature overshoots below zero) the
/// log-domain evidence takes over and `ℏ` is re-anchored to it, so later
/// intervals start from a sound value.
pub fn deviance_curve(source: &dyn Tractile, grid: &TemperingGrid) -> Result<DevianceCurve> {
    let points = grid.points();
    let n = points.len();
    let mut curve = DevianceCurve {
        grid: grid.clone(),
        h: Vec::with_capacity(n),
        hbar: Vec::with_capacity(n),
        phi1: Vec::with_capacity(n),
        log_z: Vec::with_capacity(n),
        log_z_direct: Vec::with_capacity(n),
        guarded: Vec::new(),
    };
    let mut h = source.tractile(0.0)?.to_f64();
    let mut hbar = 0.0;
    for k in 0..n {
        if k > 0 {
            let nodes = grid.interval_nodes(k - 1);
            let values = nodes
                .iter()
                .map(|&a| source.tractile(a).map(SignedLogValue::to_f64))
                .collect::<Result<Vec<f64>>>()?;
            let step = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
            hbar += simpson_integrate(&values, step)?;
            h = values[values.len() - 1];
        }
        let alpha = points[k];
        let direct = source.log_mean_power(alpha)?;
        let z = 1.0 + hbar;
        if !z.is_finite() {
            return Err(Error::QuadratureCollapse { alpha, value: z });
        }
        if z <= 0.0 || z.abs() < CANCELLATION_GUARD * hbar.abs() {
            warn!("cancellation in 1 + hbar at alpha = {alpha} (1 + hbar = {z:e}); using log-domain evidence");
            curve.guarded.push(k);
            hbar = direct.exp_m1();
            curve.phi1.push(SignedLogValue::from_f64(h).scale_exp(-direct).to_f64());
            curve.log_z.push(direct);
        } else {
            curve.phi1.push(h / z);
            curve.log_z.push(z.ln());
        }
        curve.h.push(h);
        curve.hbar.push(hbar);
        curve.log_z_direct.push(direct);
    }
    Ok(curve)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return param(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    Ok(())
}

impl DevianceCurve {
    pub fn grid(&self) -> &TemperingGrid {
        &self.grid
    }

    pub fn alphas(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn hbar(&self) -> &[f64] {
        &self.hbar
    }

    pub fn phi1(&self) -> &[f64] {
        &self.phi1
    }

    /// `log(1 + ℏ(α_k)) = ∫₀^{α_k} Φ₁`.
    pub fn log_z(&self) -> &[f64] {
        &self.log_z
    }

    /// Direct estimates `log E_π[p^{α_k}]` from the source.
    pub fn log_z_direct(&self) -> &[f64] {
        &self.log_z_direct
    }

    /// Gridpoints where the cancellation guard replaced the quadrature evidence.
    pub fn guarded(&self) -> &[usize] {
        &self.guarded
    }

    /// `Φ₁(α)`: stored value on gridpoints, monotone cubic in between.
    pub fn expected_deviance(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(monotone_cubic(self.alphas(), &self.phi1, alpha))
    }

    /// `∫₀^α Φ₁(τ) dτ = log z(α)`: stored value on gridpoints, monotone cubic
    /// in between.
    pub fn log_evidence(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(monotone_cubic(self.alphas(), &self.log_z, alpha))
    }

    /// CSV with header `alpha,h,hbar,phi1,log_z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,h,hbar,phi1,log_z\n");
        for k in 0..self.h.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(self.alphas()[k]),
                fmt_f64(self.h[k]),
                fmt_f64(self.hbar[k]),
                fmt_f64(self.phi1[k]),
                fmt_f64(self.log_z[k])
            );
        }
        out
    }
}

/// Free-function form of [`DevianceCurve::expected_deviance`].
pub fn expected_deviance(curve: &DevianceCurve, alpha: f64) -> Result<f64> {
    curve.expected_deviance(alpha)
}

/// `m(α, β) = E_π[p^{α+β}] · exp(−∫₀^α Φ₁)`.
pub fn mgf(source: &dyn Tractile, curve: &DevianceCurve, alpha: f64, beta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(0.0..=1.0).contains(&beta) {
        return param(format!("beta must lie in [0, 1], got {beta}"));
    }
    Ok((source.log_mean_power(alpha + beta)? - curve.log_evidence(alpha)?).exp())
}

/// `Φ_n(α) = E_{θ|Y;α}[ℓⁿ]` by self-normalized reweighting of the ensemble.
pub fn moment_phi_n(ens: &PriorEnsemble, alpha: f64, n: u32) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let terms: Vec<SignedLogValue> = ens
        .log_liks
        .iter()
        .map(|&l| SignedLogValue::from_f64(l.powi(n as i32)).scale_exp(alpha * l))
        .collect();
    let num = signed_lse_mean(&terms).expect("ensemble is non-empty");
    let den = ens.log_mean_power(alpha).expect("ensemble log mean");
    num.scale_exp(-den).to_f64()
}

/// Residual of `Φ₁' = (h'/h) Φ₁ − Φ₁²` at interior gridpoints using central
/// differences. `None` where `h(α_k) = 0`.
pub fn bernoulli_residual(curve: &DevianceCurve) -> Vec<Option<f64>> {
    let a = curve.alphas();
    let (h, phi) = (curve.h(), curve.phi1());
    (1..a.len().saturating_sub(1))
        .map(|k| {
            if h[k] == 0.0 {
                return None;
            }
            let span = a[k + 1] - a[k - 1];
            let dphi = (phi[k + 1] - phi[k - 1]) / span;
            let dh = (h[k + 1] - h[k - 1]) / span;
            Some((dphi - dh / h[k] * phi[k] + phi[k] * phi[k]).abs())
        })
        .collect()
}

/// Scientific notation with 17 significant digits (round-trips every f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
