//! Kernel-trace formulation of the expected deviance.
//!
//! With the residual kernel `K(θ, η) = ⟨Y − g(θ), Y − g(η)⟩` the expected
//! deviance is `log C − s·L₁(α)`, where `L_k` is the sum of the k-th powers of
//! the kernel eigenvalues under the power posterior. Under the null-skewness
//! closure the traces obey
//!
//! ```text
//! L₁' = 2s(L₁² − L₂),     L₂' = 2s·L₁(L₁² − L₂)
//! ```
//!
//! which conserves `c = L₂ − L₁²/2` and reduces to the Riccati equation
//! `L₁' = s(L₁² − 2c)`. Only the α = 0 eigenvalues need forward solves; they
//! come from a Nyström matrix over the prior ensemble.
//!
//! This pathway is a diagnostic. It is checked for internal consistency and is
//! not expected to agree with the Monte Carlo deviance curve in general.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::deviance::{fmt_f64, PriorEnsemble};
use crate::error::{param, Error, Result};
use crate::likelihood::Dataset;
use crate::numerics::TemperingGrid;

/// Runge–Kutta steps per tempering interval.
pub const RK4_STEPS_PER_INTERVAL: usize = 100;

/// Magnitude beyond which a trace trajectory is declared escaped.
pub const ESCAPE_BOUND: f64 = 1e15;

/// `⟨Y − gθ, Y − gη⟩` summed over channels.
pub fn kernel_eval(data: &Dataset, g_theta: &[Vec<f64>], g_eta: &[Vec<f64>]) -> Result<f64> {
    if g_theta.len() != data.len() || g_eta.len() != data.len() {
        return param("model outputs do not match the number of data channels");
    }
    let mut acc = 0.0;
    for ((y, a), b) in data.channels().iter().zip(g_theta).zip(g_eta) {
        if a.len() != y.len() || b.len() != y.len() {
            return param("model output length differs from data channel length");
        }
        acc += y.iter().zip(a).zip(b).map(|((y, a), b)| (y - a) * (y - b)).sum::<f64>();
    }
    Ok(acc)
}

/// Initial traces from the Nyström matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NystromTraces {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Extreme eigenvalues before clamping negatives to zero.
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Eigenvalues of `M_ij = K(θ_i, θ_j) / N` over the ensemble's cached
/// residuals, clamped at zero, and their first three power sums.
pub fn nystrom_traces(ens: &PriorEnsemble) -> Result<NystromTraces> {
    let residuals = ens.residuals().ok_or_else(|| {
        Error::Parameter("ensemble carries no residuals; the distance is not Euclidean".into())
    })?;
    let matrix = kernel_matrix(residuals);
    let eig = SymmetricEigen::try_new(matrix, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigen-solver did not converge".into()))?;
    let values = eig.eigenvalues;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite kernel eigenvalue".into()));
    }
    let min_eigenvalue = values.min();
    let max_eigenvalue = values.max();
    let (mut l1, mut l2, mut l3) = (0.0, 0.0, 0.0);
    for &v in values.iter() {
        let v = v.max(0.0);
        l1 += v;
        l2 += v * v;
        l3 += v * v * v;
    }
    Ok(NystromTraces { l1, l2, l3, min_eigenvalue, max_eigenvalue })
}

/// `M_ij = ⟨r_i, r_j⟩ / N`, filled row-parallel.
pub fn kernel_matrix(residuals: &[Vec<f64>]) -> DMatrix<f64> {
    let n = residuals.len();
    let inv = 1.0 / n as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            residuals
                .iter()
                .map(|rj| residuals[i].iter().zip(rj).map(|(a, b)| a * b).sum::<f64>() * inv)
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Initial condition for the trace ODEs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTraceState {
    s: f64,
    log_c: f64,
    l1_0: f64,
    l2_0: f64,
    l3_0: f64,
    c: f64,
}

impl KernelTraceState {
    pub fn new(s: f64, log_c: f64, l1_0: f64, l2_0: f64, l3_0: f64) -> Result<Self> {
        if !(s > 0.0) {
            return param("dispersion s must be positive");
        }
        if !(l1_0 >= 0.0) || !(l2_0 >= 0.0) || !(l3_0 >= 0.0) {
            return param("initial traces must be non-negative");
        }
        // Σλ² ≤ (Σλ)² for non-negative eigenvalues, up to roundoff
        if l2_0 > l1_0 * l1_0 * (1.0 + 1e-12) {
            return param(format!("L2_0 = {l2_0} exceeds L1_0^2 = {}", l1_0 * l1_0));
        }
        Ok(Self { s, log_c, l1_0, l2_0, l3_0, c: l2_0 - 0.5 * l1_0 * l1_0 })
    }

    pub fn from_nystrom(s: f64, log_c: f64, t: &NystromTraces) -> Result<Self> {
        Self::new(s, log_c, t.l1, t.l2.min(t.l1 * t.l1), t.l3)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn log_c(&self) -> f64 {
        self.log_c
    }

    pub fn l1_0(&self) -> f64 {
        self.l1_0
    }

    pub fn l2_0(&self) -> f64 {
        self.l2_0
    }

    pub fn l3_0(&self) -> f64 {
        self.l3_0
    }

    /// Conserved `L₂ − L₁²/2`.
    pub fn conserved(&self) -> f64 {
        self.c
    }
}

/// `(L₁, L₂)` at each gridpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCurve {
    pub alpha: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    /// `log C − s·L₁`.
    pub phi1_spectral: Vec<f64>,
}

impl TraceCurve {
    /// CSV with header `alpha,L1,L2,phi1_spectral`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,L1,L2,phi1_spectral\n");
        for k in 0..self.alpha.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.alpha[k]),
                fmt_f64(self.l1[k]),
                fmt_f64(self.l2[k]),
                fmt_f64(self.phi1_spectral[k])
            );
        }
        out
    }
}

fn trace_rhs(s: f64, l1: f64, l2: f64) -> (f64, f64) {
    let gap = l1 * l1 - l2;
    (2.0 * s * gap, 2.0 * s * l1 * gap)
}

/// Classical RK4 on the coupled trace system, [`RK4_STEPS_PER_INTERVAL`] steps
/// per grid interval.
pub fn trace_ode_integrate(state: &KernelTraceState, grid: &TemperingGrid) -> Result<TraceCurve> {
    let s = state.s;
    let pts = grid.points();
    let (mut l1, mut l2) = (state.l1_0, state.l2_0);
    let mut curve = TraceCurve {
        alpha: vec![0.0],
        l1: vec![l1],
        l2: vec![l2],
        phi1_spectral: vec![state.log_c - s * l1],
    };
    for w in pts.windows(2) {
        let h = (w[1] - w[0]) / RK4_STEPS_PER_INTERVAL as f64;
        for step in 0..RK4_STEPS_PER_INTERVAL {
            let (k1a, k1b) = trace_rhs(s, l1, l2);
            let (k2a, k2b) = trace_rhs(s, l1 + 0.5 * h * k1a, l2 + 0.5 * h * k1b);
            let (k3a, k3b) = trace_rhs(s, l1 + 0.5 * h * k2a, l2 + 0.5 * h * k2b);
            let (k4a, k4b) = trace_rhs(s, l1 + h * k3a, l2 + h * k3b);
            l1 += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            l2 += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
            if !(l1.abs() <= ESCAPE_BOUND && l2.abs() <= ESCAPE_BOUND) {
                return Err(Error::FiniteEscape { alpha: w[0] + (step + 1) as f64 * h });
            }
        }
        curve.alpha.push(w[1]);
        curve.l1.push(l1);
        curve.l2.push(l2);
        curve.phi1_spectral.push(state.log_c - s * l1);
    }
    Ok(curve)
}

/// Closed-form `L₁(α)` for `L₁' = s(L₁² − 2c)`, branch chosen by the sign of
/// the conserved constant.
pub fn trace_closed_form(state: &KernelTraceState, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return param(format!("alpha must be non-negative, got {alpha}"));
    }
    let (s, l0, c) = (state.s, state.l1_0, state.c);
    let tol = 1e-12 * (1.0 + l0 * l0);
    if c.abs() <= tol {
        // rational branch
        let denom = 1.0 - s * l0 * alpha;
        if denom <= 0.0 {
            return Err(Error::FiniteEscape { alpha: 1.0 / (s * l0) });
        }
        return Ok(l0 / denom);
    }
    if c < 0.0 {
        // L₁ = k tan(s k α + atan(L₁₀/k)),  k = √(−2c)
        let k = (-2.0 * c).sqrt();
        let phase0 = (l0 / k).atan();
        let phase = s * k * alpha + phase0;
        if phase >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::FiniteEscape {
                alpha: (std::f64::consts::FRAC_PI_2 - phase0) / (s * k),
            });
        }
        return Ok(k * phase.tan());
    }
    let k = (2.0 * c).sqrt();
    if (l0 - k).abs() <= 1e-12 * k.max(1.0) || (l0 + k).abs() <= 1e-12 * k.max(1.0) {
        // sitting on a fixed point (the rank-one case)
        return Ok(l0);
    }
    if l0.abs() < k {
        // L₁ = −k tanh(s k α − atanh(L₁₀/k))
        Ok(-k * (s * k * alpha - (l0 / k).atanh()).tanh())
    } else {
        // L₁ = −k coth(s k α + u₀),  coth(u₀) = −L₁₀/k
        let u0 = (-k / l0).atanh();
        let u = s * k * alpha + u0;
        if u0 < 0.0 && u >= 0.0 {
            return Err(Error::FiniteEscape { alpha: -u0 / (s * k) });
        }
        Ok(-k / u.tanh())
    }
}

/// `log C − s·L₁(α)` from the closed form.
pub fn spectral_deviance(state: &KernelTraceState, alpha: f64) -> Result<f64> {
    Ok(state.log_c - state.s * trace_closed_form(state, alpha)?)
}

/// `|L₃ − 3L₂L₁ + 2L₁³|`, the violation of the null-skewness closure.
pub fn skewness_gap(l1: f64, l2: f64, l3: f64) -> f64 {
    (l3 - 3.0 * l2 * l1 + 2.0 * l1 * l1 * l1).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::make_grid;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_examples() {
        let data = Dataset::new(vec![vec![2.0]]).unwrap();
        assert_eq!(kernel_eval(&data, &[vec![1.0]], &[vec![0.0]]).unwrap(), 2.0);
        assert_eq!(kernel_eval(&data, &[vec![2.0]], &[vec![7.0]]).unwrap(), 0.0);
        assert_eq!(kernel_eval(&data, &[vec![0.5]], &[vec![0.5]]).unwrap(), 2.25);
        assert!(kernel_eval(&data, &[vec![0.5, 1.0]], &[vec![0.5]]).is_err());
    }

    #[test]
    fn zero_residual_traces_vanish() {
        let ens = PriorEnsemble::from_parts(vec![vec![0.0]; 3], vec![0.0; 3], 0).unwrap();
        // from_parts carries no residuals
        assert!(nystrom_traces(&ens).is_err());
    }

    #[test]
    fn rank_one_matrix_traces() {
        let residuals: Vec<Vec<f64>> = [0.3, -1.2, 2.0, 0.7].iter().map(|&r| vec![r]).collect();
        let m = kernel_matrix(&residuals);
        let eig = SymmetricEigen::new(m);
        let l1: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let mean_sq = residuals.iter().map(|r| r[0] * r[0]).sum::<f64>() / 4.0;
        assert_relative_eq!(l1, mean_sq, max_relative = 1e-12);
    }

    #[test]
    fn fixed_point_zero_state() {
        let st = KernelTraceState::new(0.5, -1.0, 0.0, 0.0, 0.0).unwrap();
        let curve = trace_ode_integrate(&st, &make_grid(4, 3).unwrap()).unwrap();
        assert!(curve.l1.iter().chain(&curve.l2).all(|&v| v == 0.0));
        assert_eq!(trace_closed_form(&st, 0.8).unwrap(), 0.0);
        assert_eq!(spectral_deviance(&st, 0.8).unwrap(), -1.0);
    }

    #[test]
    fn rank_one_state_is_stationary() {
        let l1 = 1.7;
        let st = KernelTraceState::new(0.125, 0.0, l1, l1 * l1, l1 * l1 * l1).unwrap();
        let curve = trace_ode_integrate(&st, &make_grid(10, 3).unwrap()).unwrap();
        for v in &curve.l1 {
            assert_relative_eq!(*v, l1, max_relative = 1e-12);
        }
        assert_eq!(trace_closed_form(&st, 1.0).unwrap(), l1);
    }

    #[test]
    fn closed_form_matches_rk4_on_all_branches() {
        let grid = make_grid(10, 3).unwrap();
        let states = [
            // c < 0 is impossible with L2 >= 0 unless L2 < L1²/2
            KernelTraceState::new(0.2, 0.0, 1.0, 0.1, 0.0).unwrap(),
            // c = 0
            KernelTraceState::new(0.2, 0.0, 2.0, 2.0, 0.0).unwrap(),
            // c > 0, |L1| < k: impossible for L1 >= 0 with L2 <= L1² (k ≤ L1), so use the coth branch
            KernelTraceState::new(0.3, 0.0, 1.0, 0.9, 0.0).unwrap(),
            KernelTraceState::new(0.05, 0.0, 3.0, 6.0, 0.0).unwrap(),
        ];
        for st in states {
            let rk = trace_ode_integrate(&st, &grid).unwrap();
            for (a, l1) in rk.alpha.iter().zip(&rk.l1) {
                let cf = trace_closed_form(&st, *a).unwrap();
                assert!((cf - l1).abs() <= 1e-6, "state {st:?} alpha {a}: {cf} vs {l1}");
            }
        }
    }

    /// RK4 on the reduced scalar equation `L₁' = s(L₁² − 2c)`.
    fn riccati_rk4(s: f64, c: f64, l0: f64, alpha: f64, steps: usize) -> f64 {
        let f = |x: f64| s * (x * x - 2.0 * c);
        let h = alpha / steps as f64;
        let mut x = l0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn tanh_branch_against_rk4() {
        // |L1_0| < √(2c) cannot arise from traces, but the branch must still be right
        let st = KernelTraceState { s: 0.5, log_c: 0.0, l1_0: 0.2, l2_0: 0.0, l3_0: 0.0, c: 0.5 };
        for a in [0.1, 0.5, 1.0] {
            let oracle = riccati_rk4(st.s, st.c, st.l1_0, a, 10_000);
            assert!((trace_closed_form(&st, a).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn escapes_are_reported() {
        let st = KernelTraceState::new(1.0, 0.0, 5.0, 1.0, 0.0).unwrap();
        assert!(matches!(trace_closed_form(&st, 1.0), Err(Error::FiniteEscape { .. })));
        assert!(matches!(
            trace_ode_integrate(&st, &make_grid(10, 3).unwrap()),
            Err(Error::FiniteEscape { .. })
        ));
    }

    #[test]
    fn conservation_along_rk4() {
        let st = KernelTraceState::new(0.2, 0.0, 1.0, 0.4, 0.0).unwrap();
        let curve = trace_ode_integrate(&st, &make_grid(20, 3).unwrap()).unwrap();
        let c = st.conserved();
        for (l1, l2) in curve.l1.iter().zip(&curve.l2) {
            assert!(((l2 - 0.5 * l1 * l1) - c).abs() <= 1e-8 * c.abs());
        }
    }

    #[test]
    fn skewness_examples() {
        assert_eq!(skewness_gap(0.0, 0.0, 0.0), 0.0);
        let l = 1.3;
        assert!(skewness_gap(l, l * l, l * l * l) < 1e-14);
        assert_eq!(skewness_gap(1.0, 1.0, 5.0), 4.0);
    }

    #[test]
    fn state_validation() {
        assert!(KernelTraceState::new(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(KernelTraceState::new(1.0, 0.0, 1.0, 2.0, 1.0).is_err());
        assert!(KernelTraceState::new(1.0, 0.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn csv_header() {
        let st = KernelTraceState::new(0.1, 0.0, 1.0, 1.0, 1.0).unwrap();
        let csv = trace_ode_integrate(&st, &make_grid(2, 3).unwrap()).unwrap().to_csv();
        assert!(csv.starts_with("alpha,L1,L2,phi1_spectral\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
