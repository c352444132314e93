//! Transition (power-posterior) densities
//! `π(θ|Y;α) = π(θ) p^α(Y|θ) exp(−∫₀^α Φ₁)` on grids, samplers, and the
//! `⊕` / `⊙` density algebra.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::deviance::{fmt_f64, DevianceCurve, PriorEnsemble};
use crate::error::{param, Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::numerics::RandomStream;
use crate::prior::Prior;

/// Minimum nodes per dimension accepted by [`grid_density`].
pub const MIN_RESOLUTION: usize = 16;

/// Prior mass a grid box should cover before a warning is attached.
pub const BOX_COVERAGE: f64 = 0.999;

/// Effective sample size below which SIR output is flagged degenerate.
pub const MIN_ESS: f64 = 10.0;

/// Equally spaced nodes `low, …, high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(low: f64, high: f64, n: usize) -> Result<Self> {
        if !(high > low) || !low.is_finite() || !high.is_finite() {
            return param(format!("axis needs finite low < high, got [{low}, {high}]"));
        }
        if n < 2 {
            return param("an axis needs at least two nodes");
        }
        Ok(Self { low, high, n })
    }

    pub fn step(&self) -> f64 {
        (self.high - self.low) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.high
        } else {
            self.low + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weight of node `i`.
    fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.step()
        } else {
            self.step()
        }
    }
}

fn total_nodes(axes: &[Axis]) -> usize {
    axes.iter().map(|a| a.n).product()
}

/// Row-major multi-index (first axis slowest) of flat index `k`.
fn unravel(axes: &[Axis], mut k: usize) -> Vec<usize> {
    let mut idx = vec![0; axes.len()];
    for d in (0..axes.len()).rev() {
        idx[d] = k % axes[d].n;
        k /= axes[d].n;
    }
    idx
}

fn trapezoid_weights(axes: &[Axis]) -> Vec<f64> {
    (0..total_nodes(axes))
        .map(|k| unravel(axes, k).iter().zip(axes).map(|(&i, a)| a.weight(i)).product())
        .collect()
}

fn node_coords(axes: &[Axis], k: usize) -> Vec<f64> {
    unravel(axes, k).iter().zip(axes).map(|(&i, a)| a.node(i)).collect()
}

/// Unnormalized-by-construction grid of `log π(θ|Y;α)` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPosteriorField {
    axes: Vec<Axis>,
    alpha: f64,
    log_density: Vec<f64>,
    normalization: f64,
    forward_evals: u64,
    warnings: Vec<String>,
}

/// JSON-ready summary of a field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldMetadata {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
    pub alpha: f64,
    pub normalization: f64,
    pub forward_evals_grid: u64,
    pub warnings: Vec<String>,
}

/// `log π(θ) + α ℓ(θ) − ∫₀^α Φ₁`. One forward solve unless `α = 0` or θ lies
/// outside the prior support (then `−∞`).
pub fn log_power_posterior(
    model: &dyn LikelihoodModel,
    prior: &Prior,
    curve: &DevianceCurve,
    theta: &[f64],
    alpha: f64,
) -> Result<f64> {
    let log_z = curve.log_evidence(alpha)?;
    log_power_posterior_with(model, prior, log_z, theta, alpha)
}

fn log_power_posterior_with(
    model: &dyn LikelihoodModel,
    prior: &Prior,
    log_z: f64,
    theta: &[f64],
    alpha: f64,
) -> Result<f64> {
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if alpha == 0.0 {
        return Ok(lp);
    }
    let ll = model.evaluate(theta)?.log_likelihood;
    Ok(lp + alpha * ll - log_z)
}

/// Evaluate the transition density on a `resolution^d` lattice over `bounds`.
pub fn grid_density(
    model: &dyn LikelihoodModel,
    prior: &Prior,
    curve: &DevianceCurve,
    bounds: &[(f64, f64)],
    resolution: usize,
    alpha: f64,
) -> Result<PowerPosteriorField> {
    let d = bounds.len();
    if !(1..=2).contains(&d) {
        return param(format!("grids are supported for 1 or 2 dimensions, got {d}"));
    }
    if prior.dim() != d || model.dim() != d {
        return param(format!(
            "box has {d} dimensions but prior has {} and model {}",
            prior.dim(),
            model.dim()
        ));
    }
    if resolution < MIN_RESOLUTION {
        return param(format!("resolution must be at least {MIN_RESOLUTION}, got {resolution}"));
    }
    let axes = bounds
        .iter()
        .map(|&(lo, hi)| Axis::new(lo, hi, resolution))
        .collect::<Result<Vec<_>>>()?;
    let log_z = curve.log_evidence(alpha)?;

    let before = model.forward_evals();
    let log_density = (0..total_nodes(&axes))
        .into_par_iter()
        .map(|k| log_power_posterior_with(model, prior, log_z, &node_coords(&axes, k), alpha))
        .collect::<Result<Vec<f64>>>()?;
    let forward_evals = model.forward_evals() - before;

    let mut warnings = Vec::new();
    let coverage = prior.mass_in_box(bounds);
    if coverage < BOX_COVERAGE {
        let msg = format!("grid box covers only {coverage:.6} of the prior mass");
        warn!("{msg}");
        warnings.push(msg);
    }
    let mut field =
        PowerPosteriorField { axes, alpha, log_density, normalization: 0.0, forward_evals, warnings };
    field.normalization = normalization(&field);
    Ok(field)
}

/// Trapezoid integral of `exp(log_density)` over the box.
pub fn normalization(field: &PowerPosteriorField) -> f64 {
    trapezoid_weights(&field.axes)
        .iter()
        .zip(&field.log_density)
        .map(|(w, l)| w * l.exp())
        .sum()
}

impl PowerPosteriorField {
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Normalization integral recorded at construction.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Forward solves spent on the lattice.
    pub fn forward_evals(&self) -> u64 {
        self.forward_evals
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Product of the node spacings.
    pub fn cell_measure(&self) -> f64 {
        self.axes.iter().map(Axis::step).product()
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        node_coords(&self.axes, k)
    }

    /// The same field rescaled to unit trapezoid mass.
    pub fn to_density(&self) -> Result<GriddedDensity> {
        let max = self.log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numeric("field has no finite log-density".into()));
        }
        let values = self.log_density.iter().map(|l| (l - max).exp()).collect();
        GriddedDensity::new(self.axes.clone(), values)
    }

    pub fn metadata(&self) -> FieldMetadata {
        FieldMetadata {
            bounds: self.axes.iter().map(|a| [a.low, a.high]).collect(),
            resolution: self.axes.iter().map(|a| a.n).collect(),
            alpha: self.alpha,
            normalization: self.normalization,
            forward_evals_grid: self.forward_evals,
            warnings: self.warnings.clone(),
        }
    }

    /// CSV with header `theta1[,theta2],log_density,density`, row-major.
    /// With `renormalize` the density column is divided by the normalization
    /// integral; `log_density` is always the raw value.
    pub fn to_csv(&self, renormalize: bool) -> String {
        let mut out = String::new();
        for d in 0..self.axes.len() {
            let _ = write!(out, "theta{},", d + 1);
        }
        out.push_str("log_density,density\n");
        let shift = if renormalize { self.normalization.ln() } else { 0.0 };
        for (k, l) in self.log_density.iter().enumerate() {
            for x in self.node(k) {
                out.push_str(&fmt_f64(x));
                out.push(',');
            }
            let _ = writeln!(out, "{},{}", fmt_f64(*l), fmt_f64((l - shift).exp()));
        }
        out
    }
}

/// Non-negative grid values normalized to unit trapezoid mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl GriddedDensity {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return param("gridded densities are 1-D or 2-D");
        }
        if values.len() != total_nodes(&axes) {
            return param(format!(
                "expected {} grid values, got {}",
                total_nodes(&axes),
                values.len()
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return param("density values must be finite and non-negative");
        }
        let mass: f64 = trapezoid_weights(&axes).iter().zip(&values).map(|(w, v)| w * v).sum();
        if !(mass > 0.0) {
            return Err(Error::Degenerate("grid values integrate to zero".into()));
        }
        Ok(Self { axes, values: values.into_iter().map(|v| v / mass).collect() })
    }

    /// Sample `f` on the nodes of `axes`.
    pub fn from_fn(axes: Vec<Axis>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..total_nodes(&axes)).map(|k| f(&node_coords(&axes, k))).collect();
        Self::new(axes, values)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        trapezoid_weights(&self.axes).iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }

    /// Trapezoid mean of coordinate `axis`.
    pub fn mean(&self, axis: usize) -> f64 {
        self.moment(axis, |x| x)
    }

    pub fn variance(&self, axis: usize) -> f64 {
        let m = self.mean(axis);
        self.moment(axis, |x| (x - m) * (x - m))
    }

    fn moment(&self, axis: usize, f: impl Fn(f64) -> f64) -> f64 {
        trapezoid_weights(&self.axes)
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(k, (w, v))| w * v * f(node_coords(&self.axes, k)[axis]))
            .sum()
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.axes != other.axes {
            return param("densities live on different grids");
        }
        Ok(())
    }

    /// CSV with header `theta1[,theta2],density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for d in 0..self.axes.len() {
            let _ = write!(out, "theta{},", d + 1);
        }
        out.push_str("density\n");
        for (k, v) in self.values.iter().enumerate() {
            for x in node_coords(&self.axes, k) {
                out.push_str(&fmt_f64(x));
                out.push(',');
            }
            let _ = writeln!(out, "{}", fmt_f64(*v));
        }
        out
    }
}

/// Marginal of a 2-D field along `axis` (0 or 1), renormalized.
pub fn marginal(field: &PowerPosteriorField, axis: usize) -> Result<GriddedDensity> {
    density_marginal(&field.to_density()?, axis)
}

/// Marginal of a 2-D gridded density.
pub fn density_marginal(density: &GriddedDensity, axis: usize) -> Result<GriddedDensity> {
    let axes = density.axes();
    if axes.len() != 2 {
        return param("marginals need a 2-D density");
    }
    if axis > 1 {
        return param(format!("axis must be 0 or 1, got {axis}"));
    }
    let other = 1 - axis;
    let (n0, n1) = (axes[0].n, axes[1].n);
    let keep = axes[axis];
    let values = (0..keep.n)
        .map(|i| {
            (0..axes[other].n)
                .map(|j| {
                    let (a, b) = if axis == 0 { (i, j) } else { (j, i) };
                    debug_assert!(a < n0 && b < n1);
                    axes[other].weight(j) * density.values()[a * n1 + b]
                })
                .sum()
        })
        .collect();
    GriddedDensity::new(vec![keep], values)
}

/// `f ⊕ g = f g / ∫ f g`
pub fn perturb(f: &GriddedDensity, g: &GriddedDensity) -> Result<GriddedDensity> {
    f.same_grid(g)?;
    let values: Vec<f64> = f.values.iter().zip(&g.values).map(|(a, b)| a * b).collect();
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("perturbation product vanishes everywhere".into()));
    }
    GriddedDensity::new(f.axes.clone(), values)
}

/// `r ⊙ f = f^r / ∫ f^r`
pub fn power(f: &GriddedDensity, r: f64) -> Result<GriddedDensity> {
    if !(r > 0.0) {
        return param(format!("power exponent must be positive, got {r}"));
    }
    GriddedDensity::new(f.axes.clone(), f.values.iter().map(|v| v.powf(r)).collect())
}

/// Output of [`sir_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SirSample {
    pub samples: Vec<Vec<f64>>,
    /// `(Σw)² / Σw²` of the importance weights.
    pub ess: f64,
    pub degenerate: bool,
}

/// Sampling-importance-resampling from the prior ensemble with weights
/// `∝ p^α` and systematic resampling. No forward solves.
pub fn sir_sample(
    ens: &PriorEnsemble,
    alpha: f64,
    n_out: usize,
    stream: &mut RandomStream,
) -> Result<SirSample> {
    if n_out == 0 {
        return param("n_out must be at least 1");
    }
    if !(0.0..=1.0).contains(&alpha) {
        return param(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let weights: Vec<f64> = ens.log_weights(alpha).iter().map(|l| l.exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let degenerate = ess < MIN_ESS;
    if degenerate {
        warn!("SIR effective sample size {ess:.2} is below {MIN_ESS}");
    }
    let offset = stream.uniform();
    let mut samples = Vec::with_capacity(n_out);
    let mut cumulative = weights[0];
    let mut j = 0;
    for i in 0..n_out {
        let target = (i as f64 + offset) / n_out as f64;
        while cumulative < target && j + 1 < weights.len() {
            j += 1;
            cumulative += weights[j];
        }
        samples.push(ens.thetas()[j].clone());
    }
    Ok(SirSample { samples, ess, degenerate })
}

/// Inverse-CDF draw on one axis from node values.
fn sample_axis(axis: &Axis, values: &[f64], u: f64) -> Result<f64> {
    let h = axis.step();
    let mut cdf = Vec::with_capacity(axis.n);
    cdf.push(0.0);
    for i in 1..axis.n {
        cdf.push(cdf[i - 1] + 0.5 * h * (values[i - 1] + values[i]));
    }
    let total = cdf[axis.n - 1];
    if !(total > 0.0) {
        return Err(Error::Numeric("cannot sample from a slice with zero mass".into()));
    }
    let target = u * total;
    let i = match cdf.iter().position(|&c| c > target) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => axis.n - 2,
    };
    let span = cdf[i + 1] - cdf[i];
    let t = if span > 0.0 { ((target - cdf[i]) / span).clamp(0.0, 1.0) } else { 0.5 };
    Ok(axis.node(i) + t * h)
}

/// Inverse-CDF sampling from a gridded density. 2-D draws sample the first
/// coordinate from its marginal, then the second from the linearly
/// interpolated conditional slice.
pub fn grid_inverse_cdf_sample(
    density: &GriddedDensity,
    n_out: usize,
    stream: &mut RandomStream,
) -> Result<Vec<Vec<f64>>> {
    let axes = density.axes();
    match axes.len() {
        1 => (0..n_out)
            .map(|_| sample_axis(&axes[0], density.values(), stream.uniform()).map(|x| vec![x]))
            .collect(),
        2 => {
            let m0 = density_marginal(density, 0)?;
            let n1 = axes[1].n;
            let mut out = Vec::with_capacity(n_out);
            for _ in 0..n_out {
                let x0 = sample_axis(&axes[0], m0.values(), stream.uniform())?;
                let pos = ((x0 - axes[0].low) / axes[0].step()).clamp(0.0, (axes[0].n - 1) as f64);
                let i = (pos.floor() as usize).min(axes[0].n - 2);
                let t = pos - i as f64;
                let row: Vec<f64> = (0..n1)
                    .map(|j| {
                        (1.0 - t) * density.values()[i * n1 + j] + t * density.values()[(i + 1) * n1 + j]
                    })
                    .collect();
                let x1 = sample_axis(&axes[1], &row, stream.uniform())?;
                out.push(vec![x0, x1]);
            }
            Ok(out)
        }
        _ => param("grid sampling supports 1-D and 2-D densities"),
    }
}

/// [`grid_inverse_cdf_sample`] on a transition field.
pub fn field_inverse_cdf_sample(
    field: &PowerPosteriorField,
    n_out: usize,
    stream: &mut RandomStream,
) -> Result<Vec<Vec<f64>>> {
    if !(normalization(field) > 0.0) {
        return Err(Error::Numeric("field integrates to zero".into()));
    }
    grid_inverse_cdf_sample(&field.to_density()?, n_out, stream)
}

/// Local maxima of a 2-D density (strictly above all eight neighbours, ties
/// broken towards lower index) with height at least `rel_height` times the
/// global maximum. Returned as `(θ, value)` sorted by decreasing value.
pub fn local_maxima_2d(density: &GriddedDensity, rel_height: f64) -> Vec<(Vec<f64>, f64)> {
    let axes = density.axes();
    if axes.len() != 2 {
        return Vec::new();
    }
    let (n0, n1) = (axes[0].n, axes[1].n);
    let v = density.values();
    let global = v.iter().copied().fold(0.0, f64::max);
    let mut found = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            let c = v[i * n1 + j];
            if c < rel_height * global || c == 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= n0 as i64 || b >= n1 as i64 {
                        continue;
                    }
                    let w = v[a as usize * n1 + b as usize];
                    let earlier = (a, b) < (i as i64, j as i64);
                    if w > c || (w == c && earlier) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                found.push((vec![axes[0].node(i), axes[1].node(j)], c));
            }
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    found
}
