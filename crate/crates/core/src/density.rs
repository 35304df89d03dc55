//! Empirical law of `u(t,x)`: the Gaussian oracle in the linear additive case, kernel density
//! estimates, repeated-value detection and the probabilities behind the Bouleau–Hirsch
//! argument. None of these prove that a density exists; they are proxies and are labelled so.

use serde::Serialize;

use crate::error::{require, Error, Result};
use crate::integrals::Target;
use crate::kernels::{j_delta, TimeRule};
use crate::malliavin::derivative_norms;
use crate::par;
use crate::solver::{solve_with, Coefficients, SolverConfig, Stepper};
use crate::stats::{ks_test, normal_cdf, quantile_sorted, variance_about, Estimate, KsResult};

/// `σ² 𝒥_n(t)`: the exact variance of `u(t,x)` when `σ` is constant and `b = 0`.
pub fn gaussian_oracle_variance(cfg: &SolverConfig, coeffs: &Coefficients, step: usize) -> Result<f64> {
    if !coeffs.is_additive_linear() {
        return Err(Error::Regime("the Gaussian oracle needs a constant σ and b = 0".into()));
    }
    let sigma = coeffs.sigma.value(0.0);
    if step == 0 {
        return Ok(0.0);
    }
    let t = step as f64 * cfg.dt;
    Ok(sigma
        * sigma
        * j_delta(t, &cfg.kernel, &cfg.measure, cfg.mollifier.as_ref(), TimeRule::RightRiemann { steps: step })?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub oracle_variance: f64,
    /// Sample variance about the known mean 0.
    pub sample_variance: Estimate,
    pub variance_within_3se: bool,
    pub ks: KsResult,
    pub alpha: f64,
    pub ks_passed: bool,
}

/// Compares samples with `Normal(0, variance)`.
pub fn gaussian_oracle_check(samples: &[f64], variance: f64, alpha: f64) -> Result<OracleCheck> {
    require(samples.len() >= 2, "samples", "need at least two samples")?;
    require(variance > 0.0, "variance", "oracle variance must be positive")?;
    let sd = variance.sqrt();
    let v = variance_about(samples, 0.0);
    let ks = ks_test(samples, |x| normal_cdf(x / sd));
    Ok(OracleCheck {
        oracle_variance: variance,
        variance_within_3se: v.covers(variance, 3.0),
        sample_variance: v,
        ks_passed: ks.p_value >= alpha,
        ks,
        alpha,
    })
}

/// `0.9 min(s, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let e = Estimate::of(&xs);
    let sd = e.se * (xs.len() as f64).sqrt();
    let iqr = quantile_sorted(&xs, 0.75) - quantile_sorted(&xs, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid integral of the curve over its grid.
    pub integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KdeOutcome {
    Curve(KdeCurve),
    /// Every sample takes the same value; there is nothing to smooth.
    Degenerate { value: f64 },
}

/// Minimum sample count for a density estimate.
pub const KDE_MIN_SAMPLES: usize = 1000;

/// Gaussian-kernel density estimate on `[min − 8h, max + 8h]`, with spacing at most `h/8` so
/// that the trapezoid integral is 1 to well within `1e−6`.
pub fn kde(samples: &[f64], bandwidth: Option<f64>) -> Result<KdeOutcome> {
    require(samples.len() >= KDE_MIN_SAMPLES, "samples", "need at least 1000 samples")?;
    require(samples.iter().all(|v| v.is_finite()), "samples", "samples must be finite")?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(KdeOutcome::Degenerate { value: lo });
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    require(h.is_finite() && h > 0.0, "bandwidth", "bandwidth must be positive")?;
    let (a, b) = (lo - 8.0 * h, hi + 8.0 * h);
    let points = (1024usize).max(((b - a) / (h / 8.0)).ceil() as usize + 1);
    let dx = (b - a) / (points - 1) as f64;
    let x: Vec<f64> = (0..points).map(|i| a + i as f64 * dx).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let density: Vec<f64> = x
        .iter()
        .map(|&xi| {
            // Kernel mass beyond 38h is below double-precision resolution.
            let from = sorted.partition_point(|&s| s < xi - 38.0 * h);
            let to = sorted.partition_point(|&s| s <= xi + 38.0 * h);
            let s: f64 = sorted[from..to].iter().map(|&s| (-0.5 * ((xi - s) / h).powi(2)).exp()).sum();
            s * norm
        })
        .collect();
    let integral = dx * (density.iter().sum::<f64>() - 0.5 * (density[0] + density[points - 1]));
    Ok(KdeOutcome::Curve(KdeCurve {
        bandwidth: h,
        x,
        density,
        integral,
    }))
}

/// Number of values that occur more than once.
pub fn atom_count(samples: &[f64]) -> usize {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut count = 0;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i + 1;
        while j < xs.len() && xs[j] == xs[i] {
            j += 1;
        }
        if j - i > 1 {
            count += 1;
        }
        i = j;
    }
    count
}

/// `P̂[‖Du‖² < 1/n]` for each `n`, from derivative norms.
pub fn bh_probabilities(norms: &[f64], ns: &[f64]) -> Vec<Estimate> {
    ns.iter()
        .map(|&n| {
            let hits: Vec<f64> = norms.iter().map(|&v| if v < 1.0 / n { 1.0 } else { 0.0 }).collect();
            Estimate::of(&hits)
        })
        .collect()
}

/// Monte Carlo `P̂[‖Du(t,x)‖² < 1/n]`.
#[allow(clippy::too_many_arguments)]
pub fn bh_probability(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    target: Target,
    ns: &[f64],
    workers: usize,
) -> Result<Vec<Estimate>> {
    require(target.step > 0, "t", "target time must be positive")?;
    require(ns.iter().all(|&n| n > 0.0), "n", "levels must be positive")?;
    let norms = derivative_norms(cfg, coeffs, seed, replicas, target, workers)?;
    Ok(bh_probabilities(&norms, ns))
}

/// `u(t,x)` over replicas, in replica order.
pub fn sample_values(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    target: Target,
    workers: usize,
) -> Result<Vec<f64>> {
    require(target.step <= cfg.steps && target.point < cfg.grid().len(), "target", "off the grid")?;
    let stepper = Stepper::new(cfg);
    par::map_replicas(replicas, workers, |r| -> Result<f64> {
        let noise = cfg.sample(seed, r as u64)?;
        Ok(solve_with(&stepper, cfg, coeffs, &noise)?.at(target.step, target.point))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    /// Reminder that every entry is a numerical proxy, not a proof of existence.
    pub note: &'static str,
    pub target: Target,
    pub replicas: usize,
    pub kde: KdeOutcome,
    pub oracle: Option<OracleCheck>,
    pub repeated_values: usize,
    /// `(n, P̂[‖Du‖² < 1/n])`.
    pub bh: Vec<(f64, Estimate)>,
}

pub const PROXY_NOTE: &str = "density existence is not decidable numerically; these are proxies";

/// Law analysis of `u(t,x)`: KDE, repeated values, the Gaussian oracle when it applies and the
/// small-derivative probabilities when `σ` is constant.
#[allow(clippy::too_many_arguments)]
pub fn density_report(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    target: Target,
    ns: &[f64],
    alpha: f64,
    workers: usize,
) -> Result<(DensityReport, Vec<f64>)> {
    let samples = sample_values(cfg, coeffs, seed, replicas, target, workers)?;
    let oracle = if coeffs.is_additive_linear() && !coeffs.sigma.is_zero() && target.step > 0 {
        Some(gaussian_oracle_check(&samples, gaussian_oracle_variance(cfg, coeffs, target.step)?, alpha)?)
    } else {
        None
    };
    let bh = if coeffs.sigma.is_constant() && target.step > 0 {
        let p = bh_probability(cfg, coeffs, seed, replicas, target, ns, workers)?;
        ns.iter().copied().zip(p).collect()
    } else {
        Vec::new()
    };
    Ok((
        DensityReport {
            note: PROXY_NOTE,
            target,
            replicas,
            kde: kde(&samples, None)?,
            oracle,
            repeated_values: atom_count(&samples),
            bh,
        },
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CounterNormals;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut g = CounterNormals::new(seed, 0, n);
        (0..n)
            .map(|i| {
                g.seek(i, 0);
                g.next_pair().0
            })
            .collect()
    }

    #[test]
    fn kde_of_standard_normal_is_close_and_normalized() {
        let xs = normals(10_000, 3);
        let KdeOutcome::Curve(c) = kde(&xs, None).unwrap() else {
            panic!("degenerate")
        };
        assert!((c.integral - 1.0).abs() < 1e-6, "{}", c.integral);
        let sup = c
            .x
            .iter()
            .zip(&c.density)
            .map(|(&x, &d)| (d - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.05, "{sup}");
    }

    #[test]
    fn constant_samples_are_degenerate() {
        assert_eq!(kde(&vec![0.0; 1000], None).unwrap(), KdeOutcome::Degenerate { value: 0.0 });
    }

    #[test]
    fn repeated_values_are_counted() {
        assert_eq!(atom_count(&[1.0, 2.0, 2.0, 3.0, 3.0, 3.0]), 2);
        assert_eq!(atom_count(&normals(10_000, 1)), 0);
    }

    #[test]
    fn small_derivative_probabilities_are_nested() {
        let p = bh_probabilities(&[0.5, 0.05, 0.005, 2.0], &[1.0, 10.0, 100.0, 1000.0]);
        let means: Vec<f64> = p.iter().map(|e| e.mean).collect();
        assert_eq!(means, vec![0.75, 0.5, 0.25, 0.0]);
    }
}
