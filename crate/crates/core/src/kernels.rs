//! Fundamental-solution transforms, mollifiers and the integrability conditions on the
//! spectral measure that drive the rest of the crate.
//!
//! Fourier convention: `𝓕φ(ξ) = ∫ e^{−2πi ξ·x} φ(x) dx`. Under it the wave kernel has
//! `𝓕G(t)(ξ) = sin(2πt|ξ|) / (2π|ξ|)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require, Result};
use crate::fft::LatticeFft;
use crate::measure::{sphere_area, DiscreteSpectralMeasure, SpectralMeasureSpec};
use crate::quad::{simpson, Panels};

const SERIES_THRESHOLD: f64 = 1e-4;

/// `sin(2πtr)/(2πr)`, switching to `t(1 − (2πtr)²/6)` when `2πtr` is tiny.
#[inline]
pub fn wave_ft(t: f64, r: f64) -> f64 {
    let x = 2.0 * PI * t * r;
    if x.abs() < SERIES_THRESHOLD {
        t * (1.0 - x * x / 6.0)
    } else {
        x.sin() / (2.0 * PI * r)
    }
}

/// Checked evaluation of the wave-kernel transform.
pub fn eval_wave_ft(t: f64, xi: &[f64]) -> Result<f64> {
    require(t.is_finite() && t >= 0.0, "t", "time must be finite and nonnegative")?;
    require(xi.iter().all(|v| v.is_finite()), "xi", "frequency must be finite")?;
    let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(wave_ft(t, r))
}

/// Kernel transforms `𝓕Λ(t)(ξ)` for radial kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Kernel {
    Wave,
    /// Transform sampled on a (time, radius) grid, bilinearly interpolated and held constant
    /// outside the sampled range.
    Table {
        times: Vec<f64>,
        radii: Vec<f64>,
        /// `values[i][j] = 𝓕Λ(times[i])(radii[j])`.
        values: Vec<Vec<f64>>,
    },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        if let Kernel::Table { times, radii, values } = self {
            require(!times.is_empty() && !radii.is_empty(), "table", "empty kernel table")?;
            require(values.len() == times.len(), "table", "one row of values per time")?;
            require(values.iter().all(|row| row.len() == radii.len()), "table", "one value per radius")?;
            require(times.windows(2).all(|w| w[0] < w[1]), "times", "times must increase")?;
            require(radii.windows(2).all(|w| w[0] < w[1]), "radii", "radii must increase")?;
        }
        Ok(())
    }

    #[inline]
    pub fn ft(&self, t: f64, r: f64) -> f64 {
        match self {
            Kernel::Wave => wave_ft(t, r),
            Kernel::Table { times, radii, values } => {
                let (i0, i1, a) = bracket(times, t);
                let (j0, j1, b) = bracket(radii, r);
                let lerp = |row: &Vec<f64>| row[j0] + b * (row[j1] - row[j0]);
                lerp(&values[i0]) * (1.0 - a) + lerp(&values[i1]) * a
            }
        }
    }

    /// `J₂(t) = sup_η |𝓕Λ(t)(η)|²`.
    pub fn sup_sq(&self, t: f64) -> f64 {
        match self {
            // |sin(2πtr)| ≤ 2πtr, with equality in the limit r → 0.
            Kernel::Wave => t * t,
            Kernel::Table { radii, .. } => radii
                .iter()
                .map(|&r| self.ft(t, r).powi(2))
                .fold(0.0, f64::max),
        }
    }
}

fn bracket(xs: &[f64], x: f64) -> (usize, usize, f64) {
    if xs.len() == 1 || x <= xs[0] {
        return (0, 0, 0.0);
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return (last, last, 0.0);
    }
    let i = xs.partition_point(|&v| v <= x);
    (i - 1, i, (x - xs[i - 1]) / (xs[i] - xs[i - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MollifierFamily {
    /// Indicator of the frequency cube `max_i |ξ_i| ≤ n`.
    BandLimit,
    /// `exp(−|ξ|²/(2n²))`.
    Gaussian,
    /// Product of triangles `(1 − |ξ_i|/(n+1))₊`.
    Fejer,
}

/// Spatial mollifier `ζ_n`, applied as the Fourier multiplier `𝓕ζ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mollifier {
    pub family: MollifierFamily,
    pub n: u32,
}

impl Mollifier {
    pub fn new(family: MollifierFamily, n: u32) -> Result<Self> {
        require(n >= 1, "n", "mollifier index must be a positive integer")?;
        Ok(Mollifier { family, n })
    }

    pub fn multiplier(&self, xi: &[f64]) -> f64 {
        let n = self.n as f64;
        match self.family {
            MollifierFamily::BandLimit => {
                if xi.iter().all(|v| v.abs() <= n + 1e-12) {
                    1.0
                } else {
                    0.0
                }
            }
            MollifierFamily::Gaussian => {
                let r2: f64 = xi.iter().map(|v| v * v).sum();
                (-r2 / (2.0 * n * n)).exp()
            }
            MollifierFamily::Fejer => xi
                .iter()
                .map(|v| (1.0 - v.abs() / (n + 1.0)).max(0.0))
                .product(),
        }
    }
}

/// Multiplier of an optional mollifier on every lattice mode.
pub fn mollifier_multipliers(m: Option<&Mollifier>, grid: &crate::grid::TorusGrid) -> Vec<f64> {
    match m {
        None => vec![1.0; grid.len()],
        Some(m) => (0..grid.len()).map(|f| m.multiplier(&grid.xi(f))).collect(),
    }
}

/// Time quadrature used for `∫_0^δ … ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum TimeRule {
    Simpson { panels: usize },
    /// Nodes `s = δ i / steps` for `i = 1..=steps`, each with weight `δ/steps`. With
    /// `δ/steps` equal to the solver step this reproduces the left-endpoint stochastic sums
    /// of the time-stepping scheme exactly.
    RightRiemann { steps: usize },
}

impl TimeRule {
    pub fn nodes(&self, delta: f64) -> Vec<(f64, f64)> {
        match *self {
            TimeRule::Simpson { panels } => {
                let m = panels.max(2).next_multiple_of(2);
                let h = delta / m as f64;
                (0..=m)
                    .map(|i| {
                        let w = if i == 0 || i == m {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        (i as f64 * h, w * h / 3.0)
                    })
                    .collect()
            }
            TimeRule::RightRiemann { steps } => {
                let h = delta / steps as f64;
                (1..=steps).map(|i| (i as f64 * h, h)).collect()
            }
        }
    }
}

/// Candidate shifts for the supremum over `η` in `J₁`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EtaSearch {
    /// Include every `η = −ξ_k` on the lattice. This contains `η = 0` and, for each atom, the
    /// shift that moves it onto the peak of `|𝓕Λ|²` at the origin.
    pub lattice: bool,
    /// Additional explicit shifts.
    pub extra: Vec<Vec<f64>>,
}

impl EtaSearch {
    pub fn lattice() -> Self {
        EtaSearch {
            lattice: true,
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct J1Estimate {
    pub value: f64,
    pub argmax: Vec<f64>,
}

/// `J₁(s) = sup_η Σ_k w_k |𝓕Λ(s)(ξ_k+η)|²` over the candidate shifts.
///
/// Lattice candidates are handled as one zero-padded FFT convolution of the weights with
/// `|𝓕Λ(s)|²` sampled on the difference lattice.
pub fn j1(s: f64, kernel: &Kernel, measure: &DiscreteSpectralMeasure, search: &EtaSearch) -> Result<J1Estimate> {
    require(s.is_finite() && s >= 0.0, "s", "time must be finite and nonnegative")?;
    require(search.lattice || !search.extra.is_empty(), "eta", "empty search grid")?;
    let grid = &measure.grid;
    let d = grid.dim();
    let mut best = J1Estimate {
        value: f64::NEG_INFINITY,
        argmax: vec![0.0; d],
    };
    if search.lattice {
        let big_k = grid.cutoff();
        let p = 4 * big_k + 1;
        let padded = crate::grid::TorusGrid::with_budget(d, grid.side(), 2 * big_k, usize::MAX)?;
        let plan = LatticeFft::with_shape(d, p);
        let mut wbuf = vec![Complex64::default(); padded.len()];
        let mut fbuf = vec![Complex64::default(); padded.len()];
        for f in 0..grid.len() {
            let k = grid.mode(f);
            wbuf[padded.mode_index(&k)] = Complex64::new(measure.weights[f], 0.0);
        }
        for (e, slot) in fbuf.iter_mut().enumerate() {
            *slot = Complex64::new(kernel.ft(s, padded.xi_norm(e)).powi(2), 0.0);
        }
        plan.forward(&mut wbuf);
        plan.forward(&mut fbuf);
        for (a, b) in wbuf.iter_mut().zip(&fbuf) {
            *a *= b;
        }
        plan.inverse(&mut wbuf);
        let scale = 1.0 / padded.len() as f64;
        for f in 0..grid.len() {
            // Entry at k' holds Σ_k w_k |𝓕Λ(ξ_k − ξ_k')|², i.e. the shift η = −ξ_k'.
            let k = grid.mode(f);
            let v = wbuf[padded.mode_index(&k)].re * scale;
            if v > best.value {
                best.value = v;
                best.argmax = k.iter().map(|&c| -(c as f64) / grid.side()).collect();
            }
        }
    }
    for eta in &search.extra {
        require(eta.len() == d, "eta", "shift dimension does not match the grid")?;
        let v = shifted_sum(s, kernel, measure, eta);
        if v > best.value {
            best.value = v;
            best.argmax = eta.clone();
        }
    }
    Ok(best)
}

/// `Σ_k w_k |𝓕Λ(s)(ξ_k+η)|²` for one shift.
pub fn shifted_sum(s: f64, kernel: &Kernel, measure: &DiscreteSpectralMeasure, eta: &[f64]) -> f64 {
    let grid = &measure.grid;
    crate::stats::sum(measure.support().map(|f| {
        let r = grid
            .xi(f)
            .iter()
            .zip(eta)
            .map(|(a, b)| (a + b).powi(2))
            .sum::<f64>()
            .sqrt();
        measure.weights[f] * kernel.ft(s, r).powi(2)
    }))
}

/// `J₂(s)`.
pub fn j2(s: f64, kernel: &Kernel) -> Result<f64> {
    require(s.is_finite() && s >= 0.0, "s", "time must be finite and nonnegative")?;
    Ok(kernel.sup_sq(s))
}

/// `𝒥(δ) = ∫_0^δ Σ_k w_k |𝓕Λ(s)(ξ_k) 𝓕ζ(ξ_k)|² ds`.
pub fn j_delta(
    delta: f64,
    kernel: &Kernel,
    measure: &DiscreteSpectralMeasure,
    mollifier: Option<&Mollifier>,
    rule: TimeRule,
) -> Result<f64> {
    require(delta.is_finite() && delta >= 0.0, "delta", "window must be finite and nonnegative")?;
    let grid = &measure.grid;
    let mult = mollifier_multipliers(mollifier, grid);
    let nodes = rule.nodes(delta);
    let per_mode = measure.support().map(|f| {
        let r = grid.xi_norm(f);
        let time: f64 = nodes.iter().map(|&(s, w)| w * kernel.ft(s, r).powi(2)).sum();
        measure.weights[f] * mult[f] * mult[f] * time
    });
    Ok(crate::stats::sum(per_mode))
}

/// `𝒥̄(δ) = ∫_0^δ J₂(s) ds`.
pub fn jbar_delta(delta: f64, kernel: &Kernel, rule: TimeRule) -> Result<f64> {
    require(delta.is_finite() && delta >= 0.0, "delta", "window must be finite and nonnegative")?;
    Ok(rule.nodes(delta).iter().map(|&(s, w)| w * kernel.sup_sq(s)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionId {
    /// `∫_0^T J₁(s) ds < ∞`.
    A3,
    /// `∫_0^T J₂(s) ds < ∞`.
    A6,
    /// `sup_η ∫ μ(dξ)/(1+|ξ+η|²) < ∞`.
    #[serde(rename = "integrability")]
    Integrability,
    /// Two-sided comparison of the time-averaged `|𝓕G|²` with `1/(1+|ξ|²)`.
    #[serde(rename = "sandwich")]
    Sandwich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level {
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: ConditionId,
    pub levels: Vec<Level>,
    pub verdict: Verdict,
    pub constants: BTreeMap<String, f64>,
    pub note: String,
}

/// Relative increment between the last two truncation levels below which a sequence of
/// partial integrals counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-4;

/// Converged: monotone partial integrals whose last relative increment is below tolerance.
/// Diverging: the increments on the geometric schedule stop shrinking. Otherwise inconclusive.
pub fn classify(levels: &[Level]) -> Verdict {
    let v: Vec<f64> = levels.iter().map(|l| l.value).collect();
    if v.len() < 2 || v.iter().any(|x| !x.is_finite()) {
        return if v.iter().any(|x| x.is_infinite()) {
            Verdict::Diverging
        } else {
            Verdict::Inconclusive
        };
    }
    let monotone = v.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    let last = v[v.len() - 1];
    let inc = v[v.len() - 1] - v[v.len() - 2];
    if monotone && (last == 0.0 || inc.abs() <= CONVERGENCE_TOL * last.abs()) {
        return Verdict::Converged;
    }
    if v.len() >= 3 {
        let prev = v[v.len() - 2] - v[v.len() - 3];
        if monotone && inc >= prev * (1.0 - 1e-3) && inc > 0.0 {
            return Verdict::Diverging;
        }
    }
    Verdict::Inconclusive
}

/// Default truncation radii for the radial integrals: `10^0, 10^1, …, 10^80`.
pub fn default_schedule() -> Vec<f64> {
    (0..=80).map(|e| 10f64.powi(e)).collect()
}

/// Decades `10^0, 10^1, …` up to the largest radius the A3 quadrature accepts at horizon `T`.
pub fn a3_schedule(horizon: f64) -> Vec<f64> {
    (0..=80)
        .map(|e| 10f64.powi(e))
        .take_while(|r| r * horizon <= A3_MAX_RADIUS_TIMES_T)
        .collect()
}

/// Evaluates one integrability condition at each truncation radius of `schedule`
/// (radii in frequency units, increasing).
pub fn check_condition(
    condition: ConditionId,
    kernel: &Kernel,
    spec: &SpectralMeasureSpec,
    d: usize,
    horizon: f64,
    schedule: &[f64],
) -> Result<ConditionReport> {
    spec.validate(d)?;
    kernel.validate()?;
    require(horizon.is_finite() && horizon > 0.0, "T", "horizon must be positive")?;
    require(
        !schedule.is_empty() && schedule.windows(2).all(|w| w[0] < w[1]) && schedule[0] > 0.0,
        "schedule",
        "truncation radii must be positive and strictly increasing",
    )?;
    let mut constants = BTreeMap::new();
    let (levels, note) = match condition {
        ConditionId::A6 => {
            let v = jbar_delta(horizon, kernel, TimeRule::Simpson { panels: 64 })?;
            let levels = schedule.iter().map(|&radius| Level { radius, value: v }).collect();
            (levels, "J2 does not depend on the truncation radius".to_string())
        }
        ConditionId::Integrability => (
            integrability_levels(spec, d, schedule),
            "supremum over eta attained at eta = 0 for radially nonincreasing densities".to_string(),
        ),
        ConditionId::A3 => (
            a3_levels(kernel, spec, d, horizon, schedule)?,
            "J1 evaluated at eta = 0, a lower bound for the supremum unless the density is radially nonincreasing".to_string(),
        ),
        ConditionId::Sandwich => {
            let t_grid: Vec<f64> = (1..=64).map(|i| horizon * i as f64 / 64.0).collect();
            let c = sandwich_66(&t_grid, &log_grid(1e-3, *schedule.last().unwrap(), 400))?;
            constants.insert("C1".to_string(), c.c1);
            constants.insert("C2".to_string(), c.c2);
            let levels = vec![Level {
                radius: *schedule.last().unwrap(),
                value: c.c1,
            }];
            let verdict = if c.c1 > 0.0 && c.c2.is_finite() {
                Verdict::Converged
            } else {
                Verdict::Diverging
            };
            return Ok(ConditionReport {
                condition,
                levels,
                verdict,
                constants,
                note: format!("time grid starts at T/64 = {:e}", horizon / 64.0),
            });
        }
    };
    let verdict = classify(&levels);
    Ok(ConditionReport {
        condition,
        levels,
        verdict,
        constants,
        note,
    })
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    let (a, b) = (lo.ln(), hi.ln());
    g.extend((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()));
    g
}

/// `∫_{|ξ|≤R} μ(dξ)/(1+|ξ|²)` at each radius, integrated in `x = ln r` from `r = 1e−40`.
fn integrability_levels(spec: &SpectralMeasureSpec, d: usize, schedule: &[f64]) -> Vec<Level> {
    if let SpectralMeasureSpec::DiracZero = spec {
        return schedule.iter().map(|&radius| Level { radius, value: 1.0 }).collect();
    }
    let area = sphere_area(d);
    let f = |x: f64| {
        let r = x.exp();
        area * r.powi(d as i32) * spec.density(d, r).unwrap() / (1.0 + r * r)
    };
    radial_partials(f, schedule, 1e-40)
}

fn radial_partials(f: impl Fn(f64) -> f64, schedule: &[f64], r_min: f64) -> Vec<Level> {
    let panels = Panels::new(8);
    let mut acc = 0.0;
    let mut x = r_min.ln();
    schedule
        .iter()
        .map(|&radius| {
            let xr = radius.ln();
            if xr > x {
                let n = ((xr - x) / 0.25).ceil() as usize;
                acc += panels.integrate(x, xr, n, &f);
                x = xr;
            }
            Level { radius, value: acc }
        })
        .collect()
}

/// Largest radius for which the oscillatory A3 integrand is resolved panel by panel.
pub const A3_MAX_RADIUS_TIMES_T: f64 = 1e6;

fn a3_levels(kernel: &Kernel, spec: &SpectralMeasureSpec, d: usize, horizon: f64, schedule: &[f64]) -> Result<Vec<Level>> {
    if let SpectralMeasureSpec::DiracZero = spec {
        let v = jbar_delta(horizon, kernel, TimeRule::Simpson { panels: 64 })?;
        return Ok(schedule.iter().map(|&radius| Level { radius, value: v }).collect());
    }
    if !matches!(kernel, Kernel::Wave) {
        return Err(invalid("kernel", "A3 radial evaluation is implemented for the wave kernel"));
    }
    let last = *schedule.last().unwrap();
    if last * horizon > A3_MAX_RADIUS_TIMES_T {
        return Err(invalid("schedule", format!("A3 needs R·T ≤ {A3_MAX_RADIUS_TIMES_T:e}")));
    }
    let area = sphere_area(d);
    // ∫_0^T |𝓕G(s)(r)|² ds in closed form.
    let time_integral = |r: f64| horizon * averaged_square(horizon, r);
    let g = |r: f64| area * r.powi(d as i32 - 1) * spec.density(d, r).unwrap() * time_integral(r);
    let panels = Panels::new(8);
    // Near the origin integrate in ln r (the density may be singular); beyond r = 1 use
    // linear panels an eighth of an oscillation wide.
    let head = panels.integrate((1e-40f64).ln(), 0.0, 400, |x: f64| {
        let r = x.exp();
        r * g(r)
    });
    let width = 1.0 / (16.0 * horizon);
    let mut acc = head;
    let mut lo = 1.0;
    let mut out = Vec::with_capacity(schedule.len());
    for &radius in schedule {
        if radius > lo {
            let n = ((radius - lo) / width).ceil() as usize;
            acc += panels.integrate(lo, radius, n, g);
            lo = radius;
        }
        let value = if radius < 1.0 {
            panels.integrate((1e-40f64).ln(), radius.ln(), 400, |x: f64| {
                let r = x.exp();
                r * g(r)
            })
        } else {
            acc
        };
        out.push(Level { radius, value });
    }
    Ok(out)
}

/// `(1/t) ∫_0^t sin²(2πsr)/(4π²r²) ds = (1 − sin(x)/x)/(8π²r²)` with `x = 4πtr`.
pub fn averaged_square(t: f64, r: f64) -> f64 {
    let x = 4.0 * PI * t * r;
    if x < 1e-2 {
        t * t / 3.0 * (1.0 - x * x / 20.0 + x.powi(4) / 840.0)
    } else {
        (1.0 - x.sin() / x) / (8.0 * PI * PI * r * r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichConstants {
    /// Largest `C1` with `C1/(1+r²) ≤ (1/t)∫_0^t |𝓕G(s)(r)|² ds` on the grid.
    pub c1: f64,
    /// Smallest such upper constant `C2`.
    pub c2: f64,
}

/// Extracts the constants of the time-averaged two-sided bound on a `(t, r)` grid.
pub fn sandwich_66(t_grid: &[f64], r_grid: &[f64]) -> Result<SandwichConstants> {
    require(!t_grid.is_empty() && !r_grid.is_empty(), "grid", "empty sandwich grid")?;
    require(
        t_grid.iter().all(|&t| t.is_finite() && t > 0.0),
        "t_grid",
        "times must be positive: the lower constant degenerates as t → 0",
    )?;
    require(r_grid.iter().all(|&r| r.is_finite() && r >= 0.0), "r_grid", "radii must be nonnegative")?;
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for &t in t_grid {
        for &r in r_grid {
            let q = averaged_square(t, r) * (1.0 + r * r);
            c1 = c1.min(q);
            c2 = c2.max(q);
        }
    }
    Ok(SandwichConstants { c1, c2 })
}

/// Smallest value of `|𝓕G(t)(r)|²(1+r²)` on the grid. This is zero whenever the grid meets a
/// zero of the sine, which is why the two-sided bound only holds after time averaging.
pub fn pointwise_lower_constant(t_grid: &[f64], r_grid: &[f64]) -> f64 {
    let mut c: f64 = f64::INFINITY;
    for &t in t_grid {
        for &r in r_grid {
            c = c.min(wave_ft(t, r).powi(2) * (1.0 + r * r));
        }
    }
    c
}

/// `inf_{|η|≤R} |𝓕G(s)(ξ+η)|²` for each radius in `radii`.
///
/// `|ξ+η|` sweeps `[max(0,|ξ|−R), |ξ|+R]`. The function vanishes at `ρ = m/(2s)` and is
/// unimodal between consecutive zeros, so the infimum is zero once the interval contains a
/// zero and is attained at an endpoint otherwise.
pub fn inf_eta_demo(s: f64, xi: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
    require(s.is_finite() && s > 0.0, "s", "time must be positive")?;
    require(radii.iter().all(|&r| r >= 0.0), "radii", "radii must be nonnegative")?;
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(radii
        .iter()
        .map(|&big_r| {
            let lo = (norm - big_r).max(0.0);
            let hi = norm + big_r;
            let first_zero_at_or_above_lo = (2.0 * s * lo).ceil().max(1.0) / (2.0 * s);
            if first_zero_at_or_above_lo <= hi {
                0.0
            } else {
                wave_ft(s, lo).powi(2).min(wave_ft(s, hi).powi(2))
            }
        })
        .collect())
}

/// Time integral of `|𝓕G|²` by quadrature, used to cross-check closed forms.
pub fn time_integral_sq(kernel: &Kernel, t: f64, r: f64, panels: usize) -> f64 {
    simpson(0.0, t, panels, |s| kernel.ft(s, r).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::measure::discretize_measure;

    #[test]
    fn wave_transform_examples() {
        assert_eq!(eval_wave_ft(0.0, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(eval_wave_ft(0.5, &[0.0, 0.0]).unwrap(), 0.5);
        let v = eval_wave_ft(1.0, &[0.25]).unwrap();
        assert!((v - 1.0 / (2.0 * PI * 0.25)).abs() < 1e-15);
        assert!(eval_wave_ft(-1.0, &[0.0]).is_err());
        assert!(eval_wave_ft(1.0, &[f64::NAN]).is_err());
    }

    #[test]
    fn series_branch_is_continuous() {
        let t = 1.0;
        let r = SERIES_THRESHOLD / (2.0 * PI);
        let a = wave_ft(t, r * (1.0 - 1e-9));
        let b = wave_ft(t, r * (1.0 + 1e-9));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn averaged_square_matches_quadrature() {
        for &(t, r) in &[(1.0, 0.0), (1.0, 1e-4), (0.3, 0.7), (1.0, 5.3), (2.0, 40.0)] {
            let exact = averaged_square(t, r) * t;
            let quad = time_integral_sq(&Kernel::Wave, t, r, 4000);
            assert!((exact - quad).abs() <= 1e-10 * quad.max(1e-300), "t={t} r={r}");
        }
    }

    #[test]
    fn mollifiers_lie_in_unit_interval() {
        for fam in [MollifierFamily::BandLimit, MollifierFamily::Gaussian, MollifierFamily::Fejer] {
            let m = Mollifier::new(fam, 2).unwrap();
            assert_eq!(m.multiplier(&[0.0, 0.0]), 1.0);
            for xi in [[0.5, 1.0], [3.0, 0.0], [10.0, -10.0]] {
                let v = m.multiplier(&xi);
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(Mollifier::new(MollifierFamily::Gaussian, 0).is_err());
    }

    #[test]
    fn j1_dirac_is_j2() {
        let grid = TorusGrid::new(2, 1.0, 3).unwrap();
        let mu = discretize_measure(&SpectralMeasureSpec::DiracZero, &grid).unwrap();
        let est = j1(0.7, &Kernel::Wave, &mu, &EtaSearch::lattice()).unwrap();
        assert!((est.value - 0.49).abs() < 1e-12);
    }

    #[test]
    fn j1_lattice_route_matches_direct_shifts() {
        let grid = TorusGrid::new(2, 1.5, 3).unwrap();
        let mu = discretize_measure(&SpectralMeasureSpec::Riesz { beta: 1.2 }, &grid).unwrap();
        let fast = j1(0.4, &Kernel::Wave, &mu, &EtaSearch::lattice()).unwrap();
        let direct = (0..grid.len())
            .map(|f| {
                let eta: Vec<f64> = grid.xi(f).iter().map(|v| -v).collect();
                shifted_sum(0.4, &Kernel::Wave, &mu, &eta)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((fast.value - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn a6_for_wave_kernel() {
        let rep = check_condition(
            ConditionId::A6,
            &Kernel::Wave,
            &SpectralMeasureSpec::Riesz { beta: 1.0 },
            3,
            1.0,
            &[10.0, 100.0],
        )
        .unwrap();
        assert!((rep.levels[0].value - 1.0 / 3.0).abs() < 1e-10);
        assert_eq!(rep.verdict, Verdict::Converged);
    }

    #[test]
    fn constant_table_kernel_has_constant_j2() {
        let k = Kernel::Table {
            times: vec![0.0, 2.0],
            radii: vec![0.0, 5.0],
            values: vec![vec![0.3, 0.3], vec![0.3, 0.3]],
        };
        assert!((j2(1.0, &k).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn inf_eta_reaches_zero() {
        let vals = inf_eta_demo(0.5, &[0.3, 0.0], &[0.0, 0.1, 0.5, 1.0 + 0.3, 2.0]).unwrap();
        assert!(vals[0] > 0.0);
        assert_eq!(vals[3], 0.0);
        assert_eq!(vals[4], 0.0);
    }
}
