//! Tempering grids, quadrature, signed log-domain reductions and the random
//! stream shared by every sampler in the crate.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Default number of Simpson nodes per tempering interval.
pub const DEFAULT_SUB_POINTS: usize = 11;

/// Ordered tempering points `0 = α₀ < α₁ < … < α_K = 1` together with the
/// number of Simpson nodes used inside each interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperingGrid {
    points: Vec<f64>,
    sub_points: usize,
}

impl TemperingGrid {
    /// Uniform grid `α_k = k / n_alpha`.
    pub fn uniform(n_alpha: usize, sub_points: usize) -> Result<Self> {
        if n_alpha == 0 {
            return param("n_alpha must be at least 1");
        }
        let points = (0..=n_alpha)
            .map(|k| if k == n_alpha { 1.0 } else { k as f64 / n_alpha as f64 })
            .collect();
        Self::from_points(points, sub_points)
    }

    /// Arbitrary grid; must start at 0, end at 1 and increase strictly.
    pub fn from_points(points: Vec<f64>, sub_points: usize) -> Result<Self> {
        check_sub_points(sub_points)?;
        if points.len() < 2 {
            return param("a tempering grid needs at least two points");
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return param("tempering grid must start at 0 and end at 1");
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return param("tempering grid must be strictly increasing");
        }
        Ok(Self { points, sub_points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn sub_points(&self) -> usize {
        self.sub_points
    }

    /// Number of intervals.
    pub fn n_intervals(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of `alpha` when it is (bitwise) one of the gridpoints.
    pub fn position(&self, alpha: f64) -> Option<usize> {
        self.points.iter().position(|&p| p == alpha)
    }

    /// Simpson nodes spanning interval `k` (from `α_k` to `α_{k+1}`), endpoints
    /// included.
    pub fn interval_nodes(&self, k: usize) -> Vec<f64> {
        let (a, b) = (self.points[k], self.points[k + 1]);
        let m = self.sub_points - 1;
        (0..=m)
            .map(|j| match j {
                0 => a,
                j if j == m => b,
                j => a + (b - a) * j as f64 / m as f64,
            })
            .collect()
    }
}

/// Uniform tempering grid; see [`TemperingGrid::uniform`].
pub fn make_grid(n_alpha: usize, sub_points: usize) -> Result<TemperingGrid> {
    TemperingGrid::uniform(n_alpha, sub_points)
}

fn check_sub_points(sub_points: usize) -> Result<()> {
    if sub_points < 3 || sub_points.is_multiple_of(2) {
        return param(format!("sub_points must be an odd integer >= 3, got {sub_points}"));
    }
    Ok(())
}

/// Composite Simpson rule over equally spaced samples.
pub fn simpson_integrate(values: &[f64], step: f64) -> Result<f64> {
    let n = values.len();
    if n < 3 || n.is_multiple_of(2) {
        return param(format!("Simpson rule needs an odd node count >= 3, got {n}"));
    }
    if !(step > 0.0) {
        return param(format!("Simpson step must be positive, got {step}"));
    }
    let mut acc = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Ok(acc * step / 3.0)
}

/// A real number stored as `sign · exp(log_magnitude)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLogValue {
    pub sign: i8,
    pub log_magnitude: f64,
}

impl SignedLogValue {
    pub const ZERO: SignedLogValue = SignedLogValue { sign: 0, log_magnitude: f64::NEG_INFINITY };

    pub fn new(sign: i8, log_magnitude: f64) -> Self {
        if sign == 0 || log_magnitude == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self { sign: sign.signum(), log_magnitude }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self::new(if x > 0.0 { 1 } else { -1 }, x.abs().ln())
        }
    }

    /// `self · exp(shift)`
    pub fn scale_exp(self, shift: f64) -> Self {
        if self.sign == 0 {
            self
        } else {
            Self::new(self.sign, self.log_magnitude + shift)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.log_magnitude.exp()
        }
    }
}

/// Mean of signed log-domain terms, `(1/N) Σ terms`, accumulated after
/// factoring out the largest magnitude. Terms are summed in index order.
pub fn signed_lse_mean(terms: &[SignedLogValue]) -> Result<SignedLogValue> {
    if terms.is_empty() {
        return param("signed_lse_mean of an empty list");
    }
    let shift = terms
        .iter()
        .filter(|t| t.sign != 0)
        .map(|t| t.log_magnitude)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Ok(SignedLogValue::ZERO);
    }
    if !shift.is_finite() {
        return Err(Error::Numeric(format!("non-finite log magnitude {shift}")));
    }
    let sum: f64 = terms
        .iter()
        .filter(|t| t.sign != 0)
        .map(|t| f64::from(t.sign) * (t.log_magnitude - shift).exp())
        .sum();
    if sum == 0.0 {
        return Ok(SignedLogValue::ZERO);
    }
    Ok(SignedLogValue::new(
        if sum > 0.0 { 1 } else { -1 },
        sum.abs().ln() + shift - (terms.len() as f64).ln(),
    ))
}

/// `log((1/N) Σ exp(x_n))`, stable for arbitrarily large or small `x_n`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln() - (xs.len() as f64).ln()
}

/// Monotone piecewise-cubic (Fritsch–Carlson) interpolant through
/// `(xs[i], ys[i])`. `xs` must be strictly increasing and `x` inside the range.
pub fn monotone_cubic(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert_eq!(n, ys.len());
    if n == 1 {
        return ys[0];
    }
    if let Some(i) = xs.iter().position(|&p| p == x) {
        return ys[i];
    }
    let k = match xs.iter().position(|&p| p > x) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => n - 2,
    };
    let delta: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(xw, yw)| (yw[1] - yw[0]) / (xw[1] - xw[0]))
        .collect();
    let slope = |i: usize| -> f64 {
        if i == 0 {
            delta[0]
        } else if i == n - 1 {
            delta[n - 2]
        } else if delta[i - 1] * delta[i] <= 0.0 {
            0.0
        } else {
            // weighted harmonic mean keeps the interpolant monotone
            let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i])
        }
    };
    let (m0, m1) = (slope(k), slope(k + 1));
    let h = xs[k + 1] - xs[k];
    let t = (x - xs[k]) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * ys[k]
        + (t3 - 2.0 * t2 + t) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * ys[k + 1]
        + (t3 - t2) * h * m1
}

/// Seeded random stream: ChaCha8 keyed by `seed_from_u64(seed)`.
///
/// Substreams select a distinct ChaCha stream id, so replicate `k` of a run
/// draws the same numbers whatever order replicates are executed in.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub const ALGORITHM: &'static str = "chacha8/seed_from_u64";

    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `index` derived from the same seed.
    pub fn substream(&self, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        Self { seed: self.seed, rng }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(1, 3).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(make_grid(4, 5).unwrap().points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(10, 11).unwrap();
        assert_eq!(g.points().len(), 11);
        for (k, p) in g.points().iter().enumerate() {
            assert_relative_eq!(*p, k as f64 / 10.0);
        }
        assert!(make_grid(10, 10).is_err());
        assert!(make_grid(10, 1).is_err());
        assert!(make_grid(0, 11).is_err());
    }

    #[test]
    fn explicit_points_validated() {
        assert!(TemperingGrid::from_points(vec![0.0, 0.3, 1.0], 5).is_ok());
        assert!(TemperingGrid::from_points(vec![0.0, 0.3, 0.3, 1.0], 5).is_err());
        assert!(TemperingGrid::from_points(vec![0.1, 1.0], 5).is_err());
        assert!(TemperingGrid::from_points(vec![0.0, 0.9], 5).is_err());
    }

    #[test]
    fn interval_nodes_hit_endpoints() {
        let g = make_grid(3, 5).unwrap();
        let nodes = g.interval_nodes(1);
        assert_eq!(nodes.len(), 5);
        assert_eq!(nodes[0], g.points()[1]);
        assert_eq!(nodes[4], g.points()[2]);
    }

    #[test]
    fn simpson_examples() {
        let cubic: Vec<f64> = (0..5).map(|i| (i as f64 / 4.0).powi(3)).collect();
        assert_eq!(simpson_integrate(&cubic, 0.25).unwrap(), 0.25);
        assert_eq!(simpson_integrate(&[1.0, 1.0, 1.0], 1.0).unwrap(), 2.0);
        let h = std::f64::consts::PI / 10.0;
        let sine: Vec<f64> = (0..11).map(|i| (i as f64 * h).sin()).collect();
        // Simpson error for this panel count, from an independent evaluation
        let err = simpson_integrate(&sine, h).unwrap() - 2.0;
        assert!((err - 1.0951731500430384e-4).abs() < 1e-12);
        assert!(simpson_integrate(&[1.0, 2.0], 1.0).is_err());
        assert!(simpson_integrate(&[1.0, 2.0, 3.0, 4.0], 1.0).is_err());
        assert!(simpson_integrate(&[1.0, 2.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn simpson_fourth_order_on_exp() {
        let exact = std::f64::consts::E - 1.0;
        let err = |panels: usize| {
            let h = 1.0 / panels as f64;
            let v: Vec<f64> = (0..=panels).map(|i| (i as f64 * h).exp()).collect();
            (simpson_integrate(&v, h).unwrap() - exact).abs()
        };
        let errs: Vec<f64> = [4, 8, 16, 32].iter().map(|&p| err(p)).collect();
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 8.0, "ratio {}", w[0] / w[1]);
        }
    }

    #[test]
    fn lse_examples() {
        let one = SignedLogValue::new(1, 0.0);
        let r = signed_lse_mean(&[one, one]).unwrap();
        assert_eq!(r.sign, 1);
        assert!(r.log_magnitude.abs() < 1e-15);

        let l3 = 3f64.ln();
        let r = signed_lse_mean(&[SignedLogValue::new(1, l3), SignedLogValue::new(-1, l3)]).unwrap();
        assert_eq!(r, SignedLogValue::ZERO);

        let r = signed_lse_mean(&[
            SignedLogValue::new(1, 1000.0),
            SignedLogValue::new(1, 1000.0 + 2f64.ln()),
        ])
        .unwrap();
        assert_eq!(r.sign, 1);
        assert_relative_eq!(r.log_magnitude, 1000.0 + 1.5f64.ln(), max_relative = 1e-15);

        assert!(signed_lse_mean(&[]).is_err());
    }

    #[test]
    fn lse_survives_extreme_magnitudes() {
        let r = signed_lse_mean(&[SignedLogValue::new(1, 1e6), SignedLogValue::new(-1, 1e6 - 1.0)])
            .unwrap();
        assert_eq!(r.sign, 1);
        let expect = 1e6 + (1.0 - (-1f64).exp()).ln() - 2f64.ln();
        assert_relative_eq!(r.log_magnitude, expect, max_relative = 1e-14);
        let r = signed_lse_mean(&[SignedLogValue::new(-1, -1e6)]).unwrap();
        assert_eq!((r.sign, r.log_magnitude), (-1, -1e6));
    }

    #[test]
    fn log_mean_exp_matches_naive() {
        let xs = [0.1, -2.0, 3.0];
        let naive = (xs.iter().map(|x: &f64| x.exp()).sum::<f64>() / 3.0).ln();
        assert_relative_eq!(log_mean_exp(&xs), naive, max_relative = 1e-14);
    }

    #[test]
    fn monotone_cubic_is_exact_at_nodes_and_monotone() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.0, 0.1, 5.0, 5.1];
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(monotone_cubic(&xs, &ys, *x), y);
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=300 {
            let v = monotone_cubic(&xs, &ys, i as f64 / 100.0);
            assert!(v >= prev - 1e-14);
            prev = v;
        }
        // reproduces straight lines
        let lin = [1.0, 3.0, 5.0, 7.0];
        assert_relative_eq!(monotone_cubic(&xs, &lin, 1.7), 4.4, max_relative = 1e-14);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = RandomStream::new(42);
        let mut b = RandomStream::new(42);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RandomStream::new(43);
        assert_ne!(RandomStream::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let root = RandomStream::new(7);
        let mut s1 = root.substream(1);
        let mut s1b = root.substream(1);
        let mut s2 = root.substream(2);
        let x = s1.next_u64();
        assert_eq!(x, s1b.next_u64());
        assert_ne!(x, s2.next_u64());
        let u = RandomStream::new(0).uniform();
        assert!((0.0..1.0).contains(&u));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn lse_mean_matches_linear_mean(xs in prop::collection::vec((-10.0f64..10.0, any::<bool>()), 1..40)) {
            let terms: Vec<SignedLogValue> = xs
                .iter()
                .map(|&(l, pos)| SignedLogValue::new(if pos { 1 } else { -1 }, l))
                .collect();
            let naive: f64 = terms.iter().map(|t| t.to_f64()).sum::<f64>() / terms.len() as f64;
            let got = signed_lse_mean(&terms).unwrap().to_f64();
            let scale = terms.iter().map(|t| t.to_f64().abs()).sum::<f64>() / terms.len() as f64;
            // relative to the magnitude scale so cancellation cannot blow the bound
            prop_assert!((got - naive).abs() <= 1e-12 * scale.max(naive.abs()));
        }
    }
}
