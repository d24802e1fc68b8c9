//! Empirical laws and the reference laws they are compared against.
//!
//! Distances to the stationary law use two surrogates: the Kolmogorov-Smirnov
//! statistic and `min(W1, 2)`, an upper bound on the bounded-Lipschitz distance
//! (test functions that are 1-Lipschitz and bounded by 1).

use std::fmt;
use std::sync::Arc;

use libm::erfc;

use crate::error::{Error, Result};
use crate::model::StationaryLaw;
use crate::noise::inverse_normal_cdf;

/// Sorted, finite, non-empty 1D sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "sample",
                point: vec![*bad],
            });
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `u`-quantile of the empirical law (left-continuous inverse of the ECDF).
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.samples.len();
        let i = ((u * n as f64).ceil() as usize).clamp(1, n);
        self.samples[i - 1]
    }
}

/// Fraction of samples `≤ x`.
pub fn ecdf(dist: &EmpiricalDistribution, x: f64) -> f64 {
    let count = dist.samples.partition_point(|&s| s <= x);
    count as f64 / dist.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    /// `(1/n) Σ |x_i|²`
    pub second_moment: f64,
    /// Unbiased per-component variance.
    pub variance: Vec<f64>,
}

/// Moments of `n = values.len() / dim` points stored path-major.
pub fn moments(values: &[f64], dim: usize) -> Result<Moments> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(Error::InvalidParameter(
            "sample length is not a multiple of the dimension".into(),
        ));
    }
    let n = values.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "variance needs at least 2 samples, got {n}"
        )));
    }
    let mut mean = vec![0.0; dim];
    let mut second = 0.0;
    for p in values.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
            second += v * v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut variance = vec![0.0; dim];
    for p in values.chunks(dim) {
        for i in 0..dim {
            variance[i] += (p[i] - mean[i]).powi(2);
        }
    }
    for v in &mut variance {
        *v /= (n - 1) as f64;
    }
    Ok(Moments {
        n,
        mean,
        second_moment: second / n as f64,
        variance,
    })
}

/// Mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> Result<(f64, f64)> {
    let m = moments(values, 1)?;
    Ok((m.mean[0], (m.variance[0] / m.n as f64).sqrt()))
}

/// Unbiased variance and its standard error `sqrt((m4 − s⁴ (n−3)/(n−1)) / n)`.
pub fn variance_and_se(values: &[f64]) -> Result<(f64, f64)> {
    let m = moments(values, 1)?;
    let (mean, var, n) = (m.mean[0], m.variance[0], m.n as f64);
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let se = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n)
        .max(0.0)
        .sqrt();
    Ok((var, se))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`, clamped to `[0, 1]`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda.is_nan() || lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100_000u64 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test with the asymptotic p-value `Q(√n D)`.
pub fn ks_test(dist: &EmpiricalDistribution, reference: &ReferenceDistribution) -> KsResult {
    let n = dist.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in dist.samples.iter().enumerate() {
        let f = reference.cdf(x);
        let above = (i + 1) as f64 / nf - f;
        let below = f - i as f64 / nf;
        d = d.max(above.abs()).max(below.abs());
    }
    KsResult {
        statistic: d,
        p_value: if d == 0.0 {
            1.0
        } else {
            kolmogorov_q(nf.sqrt() * d)
        },
        n,
    }
}

/// `∫₀¹ |F⁻¹(u) − G⁻¹(u)| du` between two empirical laws.
pub fn wasserstein1_1d(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    let (a, b) = (&p.samples, &q.samples);
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    // Merge the quantile breakpoints i/n and j/m.
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// `min(W1, 2)`: both 1-Lipschitz and `|F| ≤ 1` constraints of the bounded-Lipschitz class are honoured.
pub fn bl_distance_upper(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    wasserstein1_1d(p, q).min(2.0)
}

/// Five-point Gauss-Legendre rule on `[-1, 1]`.
fn gauss_legendre5() -> ([f64; 5], [f64; 5]) {
    let s = (10.0f64 / 7.0).sqrt();
    let x1 = (5.0 - 2.0 * s).sqrt() / 3.0;
    let x2 = (5.0 + 2.0 * s).sqrt() / 3.0;
    let w0 = 128.0 / 225.0;
    let w1 = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
    let w2 = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
    ([-x2, -x1, 0.0, x1, x2], [w2, w1, w0, w1, w2])
}

fn integrate(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, nodes: &([f64; 5], [f64; 5])) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    nodes
        .0
        .iter()
        .zip(&nodes.1)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

pub type Potential = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Density `exp(−U(x)) / Z` on `[lo, hi]`, with a cumulative table on a uniform grid.
pub struct GibbsTable {
    potential: Potential,
    lo: f64,
    hi: f64,
    cell: f64,
    z: f64,
    /// Unnormalized cumulative mass at each grid node.
    cumulative: Vec<f64>,
    nodes: ([f64; 5], [f64; 5]),
}

impl fmt::Debug for GibbsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GibbsTable")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("cells", &(self.cumulative.len() - 1))
            .field("z", &self.z)
            .finish()
    }
}

impl GibbsTable {
    pub fn new(potential: Potential, lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) || cells == 0 {
            return Err(Error::InvalidParameter(
                "need lo < hi and at least one cell".into(),
            ));
        }
        let nodes = gauss_legendre5();
        let cell = (hi - lo) / cells as f64;
        let weight = |x: f64| (-potential(x)).exp();
        let mut cumulative = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for i in 0..cells {
            let a = lo + i as f64 * cell;
            acc += integrate(&weight, a, a + cell, &nodes);
            cumulative.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::InvalidParameter(
                "potential does not define a normalizable density".into(),
            ));
        }
        Ok(Self {
            potential,
            lo,
            hi,
            cell,
            z: acc,
            cumulative,
            nodes,
        })
    }

    pub fn normalization(&self) -> f64 {
        self.z
    }

    /// Normalized CDF at the grid nodes.
    pub fn node_cdf(&self) -> Vec<f64> {
        self.cumulative.iter().map(|c| c / self.z).collect()
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            0.0
        } else {
            (-(self.potential)(x)).exp() / self.z
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let i = (((x - self.lo) / self.cell) as usize).min(self.cumulative.len() - 2);
        let a = self.lo + i as f64 * self.cell;
        let weight = |t: f64| (-(self.potential)(t)).exp();
        let partial = if x > a {
            integrate(&weight, a, x, &self.nodes)
        } else {
            0.0
        };
        ((self.cumulative[i] + partial) / self.z).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lo;
        }
        if u >= 1.0 {
            return self.hi;
        }
        let target = u * self.z;
        let i = self
            .cumulative
            .partition_point(|&c| c < target)
            .clamp(1, self.cumulative.len() - 1);
        let (mut lo, mut hi) = (
            self.lo + (i - 1) as f64 * self.cell,
            self.lo + i as f64 * self.cell,
        );
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `∫ φ(x) p(x) dx` over the table range.
    pub fn expectation(&self, phi: impl Fn(f64) -> f64) -> f64 {
        let cells = self.cumulative.len() - 1;
        let integrand = |x: f64| phi(x) * (-(self.potential)(x)).exp();
        (0..cells)
            .map(|i| {
                let a = self.lo + i as f64 * self.cell;
                integrate(&integrand, a, a + self.cell, &self.nodes)
            })
            .sum::<f64>()
            / self.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Normal,
    QuarticGibbs,
    Gibbs1D,
}

/// A 1D law with a continuous CDF.
#[derive(Debug, Clone)]
pub enum ReferenceDistribution {
    Normal {
        mean: f64,
        variance: f64,
    },
    Gibbs {
        kind: ReferenceKind,
        table: Arc<GibbsTable>,
    },
}

pub const QUARTIC_RANGE: f64 = 8.0;
pub const QUARTIC_CELLS: usize = 4096;

/// Law with density proportional to `exp(−x²/2 − x⁴/4)`.
pub fn quartic_gibbs() -> ReferenceDistribution {
    let table = GibbsTable::new(
        Arc::new(|x: f64| 0.5 * x * x + 0.25 * x * x * x * x),
        -QUARTIC_RANGE,
        QUARTIC_RANGE,
        QUARTIC_CELLS,
    )
    .expect("quartic potential is normalizable");
    ReferenceDistribution::Gibbs {
        kind: ReferenceKind::QuarticGibbs,
        table: Arc::new(table),
    }
}

impl ReferenceDistribution {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bad normal parameters ({mean}, {variance})"
            )));
        }
        Ok(Self::Normal { mean, variance })
    }

    /// Density proportional to `exp(−U(x))`, truncated to `[lo, hi]`.
    pub fn gibbs(potential: Potential, lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Ok(Self::Gibbs {
            kind: ReferenceKind::Gibbs1D,
            table: Arc::new(GibbsTable::new(potential, lo, hi, cells)?),
        })
    }

    pub fn from_law(law: StationaryLaw) -> Result<Self> {
        match law {
            StationaryLaw::Normal { mean, variance } => Self::normal(mean, variance),
            StationaryLaw::QuarticGibbs => Ok(quartic_gibbs()),
        }
    }

    pub fn kind(&self) -> ReferenceKind {
        match self {
            Self::Normal { .. } => ReferenceKind::Normal,
            Self::Gibbs { kind, .. } => *kind,
        }
    }

    pub fn normalization(&self) -> f64 {
        match self {
            Self::Normal { variance, .. } => (2.0 * std::f64::consts::PI * variance).sqrt(),
            Self::Gibbs { table, .. } => table.normalization(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Normal { mean, variance } => 0.5 * erfc(-(x - mean) / (2.0 * variance).sqrt()),
            Self::Gibbs { table, .. } => table.cdf(x),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Self::Normal { mean, variance } => {
                (-(x - mean).powi(2) / (2.0 * variance)).exp()
                    / (2.0 * std::f64::consts::PI * variance).sqrt()
            }
            Self::Gibbs { table, .. } => table.density(x),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Normal { mean, variance } => mean + variance.sqrt() * inverse_normal_cdf(u),
            Self::Gibbs { table, .. } => table.quantile(u),
        }
    }

    /// `∫ φ dπ` by quadrature; the normal case integrates over `mean ± 12 sd`.
    pub fn expectation(&self, phi: impl Fn(f64) -> f64) -> f64 {
        match self {
            Self::Normal { mean, variance } => {
                let sd = variance.sqrt();
                let table = GibbsTable::new(
                    Arc::new({
                        let (m, v) = (*mean, *variance);
                        move |x: f64| (x - m).powi(2) / (2.0 * v)
                    }),
                    mean - 12.0 * sd,
                    mean + 12.0 * sd,
                    2048,
                )
                .expect("normal table");
                table.expectation(phi)
            }
            Self::Gibbs { table, .. } => table.expectation(phi),
        }
    }

    /// `n` points at the quantiles `(i − 0.5)/n`, a deterministic stand-in for a sample.
    pub fn quantile_sample(&self, n: usize) -> Result<EmpiricalDistribution> {
        EmpiricalDistribution::new(
            (0..n)
                .map(|i| self.quantile((i as f64 + 0.5) / n as f64))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    /// Probability of each bin; sums to 1.
    pub mass: Vec<f64>,
    /// `mass / width`.
    pub density: Vec<f64>,
    pub counted: usize,
}

impl Histogram1D {
    pub fn centers(&self) -> Vec<f64> {
        (0..self.mass.len())
            .map(|i| self.lo + (i as f64 + 0.5) * self.width)
            .collect()
    }
}

fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(x >= lo && x <= hi) {
        return None;
    }
    let i = ((x - lo) / (hi - lo) * bins as f64) as usize;
    Some(i.min(bins - 1))
}

fn check_range(bins: usize, lo: f64, hi: f64) -> Result<()> {
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be >= 1".into()));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "empty histogram range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Normalized histogram over `[lo, hi]`; samples outside the range are dropped.
pub fn histogram_density(samples: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram1D> {
    let (lo, hi) = range;
    check_range(bins, lo, hi)?;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        if let Some(i) = bin_index(x, lo, hi, bins) {
            counts[i] += 1;
        }
    }
    let counted: usize = counts.iter().sum();
    if counted == 0 {
        return Err(Error::InsufficientData(
            "no samples inside the histogram range".into(),
        ));
    }
    let width = (hi - lo) / bins as f64;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / counted as f64).collect();
    let density = mass.iter().map(|m| m / width).collect();
    Ok(Histogram1D {
        lo,
        hi,
        width,
        mass,
        density,
        counted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub bins: usize,
    /// `mass[ix * bins + iy]`, sums to 1.
    pub mass: Vec<f64>,
    pub density: Vec<f64>,
    pub counted: usize,
}

impl Histogram2D {
    pub fn cell_area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * (self.y_range.1 - self.y_range.0)
            / (self.bins * self.bins) as f64
    }

    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let wx = (self.x_range.1 - self.x_range.0) / self.bins as f64;
        let wy = (self.y_range.1 - self.y_range.0) / self.bins as f64;
        (
            self.x_range.0 + (ix as f64 + 0.5) * wx,
            self.y_range.0 + (iy as f64 + 0.5) * wy,
        )
    }

    /// `Σ |p − q|` over bins of two histograms on the same grid.
    pub fn l1_distance(&self, other: &Histogram2D) -> Result<f64> {
        if self.bins != other.bins || self.x_range != other.x_range || self.y_range != other.y_range
        {
            return Err(Error::Misuse("histograms are on different grids".into()));
        }
        Ok(self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Normalized `bins × bins` histogram of path-major 2D points.
pub fn histogram_density_2d(
    points: &[f64],
    bins: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Result<Histogram2D> {
    check_range(bins, x_range.0, x_range.1)?;
    check_range(bins, y_range.0, y_range.1)?;
    if !points.len().is_multiple_of(2) {
        return Err(Error::InvalidParameter(
            "2D points must come in pairs".into(),
        ));
    }
    let mut counts = vec![0usize; bins * bins];
    for p in points.chunks(2) {
        if let (Some(i), Some(j)) = (
            bin_index(p[0], x_range.0, x_range.1, bins),
            bin_index(p[1], y_range.0, y_range.1, bins),
        ) {
            counts[i * bins + j] += 1;
        }
    }
    let counted: usize = counts.iter().sum();
    if counted == 0 {
        return Err(Error::InsufficientData(
            "no samples inside the histogram range".into(),
        ));
    }
    let area = (x_range.1 - x_range.0) * (y_range.1 - y_range.0) / (bins * bins) as f64;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / counted as f64).collect();
    let density = mass.iter().map(|m| m / area).collect();
    Ok(Histogram2D {
        x_range,
        y_range,
        bins,
        mass,
        density,
        counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::IncrementStream;
    use libm::tgamma as gamma;
    use proptest::prelude::*;

    fn emp(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    fn std_normal() -> ReferenceDistribution {
        ReferenceDistribution::normal(0.0, 1.0).unwrap()
    }

    /// Ascending series for the modified Bessel function of the first kind.
    fn bessel_i(nu: f64, x: f64) -> f64 {
        (0..30)
            .map(|k| {
                let k = k as f64;
                (x / 2.0).powf(2.0 * k + nu) / (gamma(k + 1.0) * gamma(k + nu + 1.0))
            })
            .sum()
    }

    #[test]
    fn ecdf_examples() {
        let d = emp(&[3.0, 1.0, 2.0]);
        assert_eq!(ecdf(&d, 0.0), 0.0);
        assert_eq!(ecdf(&d, 2.0), 2.0 / 3.0);
        assert_eq!(ecdf(&d, 10.0), 1.0);
        assert!(EmpiricalDistribution::new(vec![]).is_err());
        assert!(EmpiricalDistribution::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn ks_hand_oracle() {
        let r = ks_test(&emp(&[-1.0, 0.0, 1.0]), &std_normal());
        assert!((r.statistic - 0.1746780794018763).abs() < 1e-12);
        assert_eq!(r.n, 3);
    }

    #[test]
    fn ks_at_quantiles_is_half_over_n() {
        let n = 200;
        let sample = std_normal().quantile_sample(n).unwrap();
        let r = ks_test(&sample, &std_normal());
        assert!((r.statistic - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_series_values() {
        assert!((kolmogorov_q(1.0) - 0.26999967167735456).abs() < 1e-12);
        assert_eq!(kolmogorov_q(0.0), 1.0);
        assert!(kolmogorov_q(0.01) <= 1.0 && kolmogorov_q(0.01) > 0.999);
        assert!(kolmogorov_q(5.0) < 1e-20);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1_1d(&emp(&[0.0, 1.0]), &emp(&[0.0, 0.0])), 0.5);
        let p = emp(&[0.3, -1.0, 2.5, 7.0]);
        assert_eq!(wasserstein1_1d(&p, &p), 0.0);
        let shifted = emp(&[0.3 + 0.01, -1.0 + 0.01, 2.5 + 0.01, 7.0 + 0.01]);
        assert!((bl_distance_upper(&p, &shifted) - 0.01).abs() < 1e-12);
        let far = emp(&[1e6 + 0.3, 1e6 - 1.0, 1e6 + 2.5, 1e6 + 7.0]);
        assert_eq!(bl_distance_upper(&p, &far), 2.0);
    }

    #[test]
    fn wasserstein_unequal_sizes() {
        // Duplicating every sample leaves the law unchanged.
        let p = emp(&[0.0, 1.0, 5.0]);
        let q = emp(&[0.0, 0.0, 1.0, 1.0, 5.0, 5.0]);
        assert!(wasserstein1_1d(&p, &q).abs() < 1e-15);
        assert!((wasserstein1_1d(&emp(&[0.0]), &emp(&[1.0, 3.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn moments_examples() {
        let m = moments(&[2.5, 2.5, 2.5], 1).unwrap();
        assert_eq!(m.mean, vec![2.5]);
        assert_eq!(m.variance, vec![0.0]);
        let m = moments(&[-1.0, 1.0], 1).unwrap();
        assert_eq!(m.mean, vec![0.0]);
        assert_eq!(m.second_moment, 1.0);
        assert!(moments(&[1.0], 1).is_err());
        let m2 = moments(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(m2.mean, vec![2.0, 3.0]);
        assert_eq!(m2.second_moment, 15.0);
    }

    #[test]
    fn second_moment_of_normal_draws() {
        let mut s = IncrementStream::new(2024, 1.0);
        let v: Vec<f64> = (0..100_000).map(|_| s.next_increment()).collect();
        let m = moments(&v, 1).unwrap();
        assert!((m.second_moment - 1.0).abs() < 4.0 * (2.0f64 / 1e5).sqrt());
        let (var, se) = variance_and_se(&v).unwrap();
        assert!((se - (2.0f64 / 1e5).sqrt()).abs() < 0.1 * se);
        assert!((var - 1.0).abs() < 4.0 * se);
    }

    #[test]
    fn quartic_normalization_matches_bessel_identity() {
        let z = quartic_gibbs().normalization();
        let eighth = 0.125f64;
        let bessel = std::f64::consts::FRAC_PI_2
            * eighth.exp()
            * (bessel_i(-0.25, eighth) - bessel_i(0.25, eighth));
        assert!((z - bessel).abs() / bessel < 1e-8, "{z} vs {bessel}");
        assert!((z - 1.9352478184967274).abs() < 1e-12);
    }

    #[test]
    fn quartic_symmetry_and_moments() {
        let q = quartic_gibbs();
        assert!((q.cdf(0.0) - 0.5).abs() < 1e-10);
        assert!(q.expectation(|x| x).abs() < 1e-12);
        let m2 = q.expectation(|x| x * x);
        assert!((m2 - 0.4679199169736844).abs() < 1e-12);
        // E[x² + x⁴] = 1 by integration by parts against the potential.
        assert!((q.expectation(|x| x * x + x.powi(4)) - 1.0).abs() < 1e-12);
        assert!((q.expectation(|_| 1.0) - 1.0).abs() < 1e-12);
        assert!((q.cdf(1.0) - 0.9250751617624388).abs() < 1e-12);
    }

    #[test]
    fn quartic_cdf_strictly_increasing_and_invertible() {
        let q = quartic_gibbs();
        let mut prev = 0.0;
        for i in 1..400 {
            let x = -3.0 + 6.0 * i as f64 / 400.0;
            let c = q.cdf(x);
            assert!(c > prev, "x={x} c={c} prev={prev}");
            prev = c;
        }
        for u in [1e-6, 0.01, 0.2, 0.5, 0.77, 0.999, 1.0 - 1e-7] {
            assert!((q.cdf(q.quantile(u)) - u).abs() < 1e-8);
        }
        if let ReferenceDistribution::Gibbs { table, .. } = &q {
            let nodes = table.node_cdf();
            assert!(nodes.windows(2).all(|w| w[1] >= w[0]));
            // Strict on [−6, 0]; the upper half mirrors it.
            assert!(nodes[QUARTIC_CELLS / 8..=QUARTIC_CELLS / 2]
                .windows(2)
                .all(|w| w[1] > w[0]));
        }
        assert_eq!(q.cdf(-9.0), 0.0);
        assert_eq!(q.cdf(9.0), 1.0);
    }

    #[test]
    fn generic_gibbs_reproduces_normal() {
        let g = ReferenceDistribution::gibbs(Arc::new(|x: f64| 0.5 * x * x), -12.0, 12.0, 2048)
            .unwrap();
        let n = std_normal();
        for x in [-2.0, -0.3, 0.0, 1.1, 3.0] {
            assert!((g.cdf(x) - n.cdf(x)).abs() < 1e-12);
            assert!((g.density(x) - n.density(x)).abs() < 1e-12);
        }
        assert_eq!(g.kind(), ReferenceKind::Gibbs1D);
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        let n = ReferenceDistribution::normal(1.0, 4.0).unwrap();
        for u in [0.001, 0.3, 0.5, 0.9] {
            assert!((n.cdf(n.quantile(u)) - u).abs() < 1e-13);
        }
        assert!((n.expectation(|x| (x - 1.0).powi(2)) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram_density(&[0.3], 10, (0.0, 1.0)).unwrap();
        assert_eq!(h.mass.iter().filter(|&&m| m == 1.0).count(), 1);
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let h = histogram_density(&uniform, 10, (0.0, 1.0)).unwrap();
        assert!(h.density.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let integral: f64 = h.density.iter().map(|d| d * h.width).sum();
        assert!((integral - 1.0).abs() < 1e-12);
        assert!(histogram_density(&[0.3], 10, (1.0, 1.0)).is_err());
        assert!(histogram_density(&[5.0], 10, (0.0, 1.0)).is_err());
    }

    #[test]
    fn histogram_2d_normalization() {
        let pts = [0.1, 0.1, 0.9, 0.9, 0.5, 0.2, 0.5, 0.2];
        let h = histogram_density_2d(&pts, 4, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let integral: f64 = h.density.iter().map(|d| d * h.cell_area()).sum();
        assert!((integral - 1.0).abs() < 1e-12);
        assert_eq!(h.mass[2 * 4], 0.5);
        assert_eq!(h.l1_distance(&h).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn ks_invariant_under_affine_maps(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut s = IncrementStream::new(seed, 1.0);
            let v: Vec<f64> = (0..200).map(|_| s.next_increment()).collect();
            let base = ks_test(&emp(&v), &std_normal());
            let mapped: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let reference = ReferenceDistribution::normal(b, a * a).unwrap();
            let moved = ks_test(&emp(&mapped), &reference);
            prop_assert!((base.statistic - moved.statistic).abs() < 1e-12);
        }

        #[test]
        fn w1_triangle_inequality(
            a in prop::collection::vec(-100.0f64..100.0, 1..40),
            b in prop::collection::vec(-100.0f64..100.0, 1..40),
            c in prop::collection::vec(-100.0f64..100.0, 1..40),
        ) {
            let (a, b, c) = (emp(&a), emp(&b), emp(&c));
            let ab = wasserstein1_1d(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - wasserstein1_1d(&b, &a)).abs() < 1e-12 * (1.0 + ab));
            prop_assert!(wasserstein1_1d(&a, &c) <= ab + wasserstein1_1d(&b, &c) + 1e-12 * (1.0 + ab));
        }

        #[test]
        fn p_value_nonincreasing_in_d(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, n in 1usize..100_000) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let s = (n as f64).sqrt();
            prop_assert!(kolmogorov_q(s * lo) >= kolmogorov_q(s * hi) - 1e-12);
        }

        #[test]
        fn histogram_mass_sums_to_one(v in prop::collection::vec(-3.0f64..3.0, 1..300), bins in 1usize..50) {
            let h = histogram_density(&v, bins, (-3.0, 3.0)).unwrap();
            let total: f64 = h.density.iter().map(|d| d * h.width).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
