//! Monte Carlo reductions and the few statistical tests the suites rely on.
//!
//! Every reduction walks its input in index order, so results do not depend on how
//! replicas were scheduled across threads.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = sum(xs.iter().copied()) / n as f64;
        let var = if n > 1 {
            sum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// True when `value` lies within `k` standard errors of the estimate.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// Sample variance about a known mean, with the delta-method standard error
/// `sqrt((m4 − v²)/N)`.
pub fn variance_about(xs: &[f64], mean: f64) -> Estimate {
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    Estimate::of(&sq)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided standard normal critical value for level `alpha`.
pub fn normal_critical(alpha: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sq = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d),
        n: xs.len(),
    }
}

/// `P[K > λ]` for the limiting Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Family-wise significance matching a single two-sided 3 SE test.
pub const THREE_SIGMA_ALPHA: f64 = 0.0027;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub comparisons: usize,
    pub max_abs_z: f64,
    /// Bonferroni critical value for the family.
    pub critical: f64,
    pub passed: bool,
}

/// Streaming test that `E[P(x, x+y)]` does not depend on `x`.
///
/// For every shift `y`, component `c` and base point `x ≠ 0`, the paired differences
/// `P_r(x, x+y) − P_r(0, y)` over replicas `r` get a z-test; all tests share one family-wise
/// level (Bonferroni). Differences at rounding level on every replica are exact and count
/// as passing.
pub struct StationarityAccumulator {
    grid: crate::grid::TorusGrid,
    components: usize,
    shifts: Vec<usize>,
    replicas: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    max_diff: Vec<f64>,
    max_base: Vec<f64>,
}

impl StationarityAccumulator {
    pub fn new(grid: &crate::grid::TorusGrid, components: usize, shifts: &[usize]) -> Self {
        let cells = shifts.len() * components * grid.len();
        StationarityAccumulator {
            grid: grid.clone(),
            components,
            shifts: shifts.to_vec(),
            replicas: 0,
            sum: vec![0.0; cells],
            sum_sq: vec![0.0; cells],
            max_diff: vec![0.0; cells],
            max_base: vec![0.0; shifts.len() * components],
        }
    }

    /// Adds one replica; `prod(c, a, b)` is its product for component `c` at points `a`, `b`.
    pub fn add(&mut self, prod: impl Fn(usize, usize, usize) -> f64) {
        let len = self.grid.len();
        for (yi, &y) in self.shifts.iter().enumerate() {
            for c in 0..self.components {
                let base = prod(c, 0, y);
                let bi = yi * self.components + c;
                self.max_base[bi] = self.max_base[bi].max(base.abs());
                for x in 1..len {
                    let d = prod(c, x, self.grid.translate(x, y)) - base;
                    let k = bi * len + x;
                    self.sum[k] += d;
                    self.sum_sq[k] += d * d;
                    self.max_diff[k] = self.max_diff[k].max(d.abs());
                }
            }
        }
        self.replicas += 1;
    }

    pub fn finish(&self, family_alpha: f64) -> StationarityReport {
        let len = self.grid.len();
        let comparisons = self.shifts.len() * self.components * len.saturating_sub(1);
        let critical = normal_critical(family_alpha / comparisons.max(1) as f64);
        let n = self.replicas as f64;
        let mut max_abs_z: f64 = 0.0;
        for bi in 0..self.shifts.len() * self.components {
            for x in 1..len {
                let k = bi * len + x;
                if self.max_diff[k] == 0.0 || self.max_diff[k] <= 1e-10 * self.max_base[bi] {
                    continue;
                }
                let mean = self.sum[k] / n;
                let var = ((self.sum_sq[k] - n * mean * mean) / (n - 1.0)).max(0.0);
                let se = (var / n).sqrt();
                let z = if se > 0.0 { mean.abs() / se } else { f64::INFINITY };
                max_abs_z = max_abs_z.max(z);
            }
        }
        StationarityReport {
            comparisons,
            max_abs_z,
            critical,
            passed: self.replicas >= 2 && max_abs_z <= critical,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(xs), 2.0);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        let a = kolmogorov_survival(1.1799999);
        let b = kolmogorov_survival(1.1800001);
        assert!((a - b).abs() < 1e-6);
        // Tabulated critical value of the Kolmogorov distribution at the 1% level.
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn slope_of_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        assert!((ls_slope(&xs, &ys) - 2.5).abs() < 1e-14);
    }
}
