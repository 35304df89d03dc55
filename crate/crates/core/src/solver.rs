//! Mild-solution integrator for `∂²u/∂t² = Δu + σ(u) Ṁ + b(u)` on the torus with zero
//! initial data.
//!
//! The scheme is the causal recursion
//! `u(t_i) = Σ_{j<i} G_n(t_i−t_j) ∗ (σ(u_j) ΔM_j + ω_j Δt b(u_j))`, left-endpoint in the
//! stochastic term and trapezoidal in the drift (`ω_0 = ½`, the `j = i` node carries
//! `G(0) = 0`). Convolutions are Fourier multipliers. For the wave kernel the double sum is
//! carried by running cosine/sine accumulators per mode, using
//! `sin(2π(t−s)r) = sin(2πtr)cos(2πsr) − cos(2πtr)sin(2πsr)`; near-zero frequencies fall back
//! to the direct sum.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{require, Error, Result};
use crate::fft::LatticeFft;
use crate::grid::TorusGrid;
use crate::kernels::{mollifier_multipliers, Kernel, Mollifier};
use crate::measure::DiscreteSpectralMeasure;
use crate::noise::{sample_increments, ConsBasis, HtVector, NoiseIncrements, NoiseKey};
use crate::par;
use crate::stats::{Estimate, StationarityAccumulator, StationarityReport};

/// Solutions larger than this in magnitude abort the run.
pub const BLOWUP: f64 = 1e12;

/// Scalar coefficient `σ` or `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Coefficient {
    Zero,
    Const { value: f64 },
    Linear { slope: f64 },
    Affine { intercept: f64, slope: f64 },
    /// `offset + amplitude · sin(v)`.
    Sin {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Piecewise-linear interpolation of `(xs, ys)`, extended linearly beyond the ends.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl Coefficient {
    pub fn sin() -> Self {
        Coefficient::Sin {
            amplitude: 1.0,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Coefficient::Table { xs, ys } = self {
            require(xs.len() >= 2 && xs.len() == ys.len(), "table", "need at least two (x, y) pairs")?;
            require(xs.windows(2).all(|w| w[0] < w[1]), "table", "abscissae must increase")?;
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        match self {
            Coefficient::Zero => 0.0,
            Coefficient::Const { value } => *value,
            Coefficient::Linear { slope } => slope * v,
            Coefficient::Affine { intercept, slope } => intercept + slope * v,
            Coefficient::Sin { amplitude, offset } => offset + amplitude * v.sin(),
            Coefficient::Table { xs, ys } => {
                let i = table_segment(xs, v);
                ys[i] + (v - xs[i]) * (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
            }
        }
    }

    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            Coefficient::Zero | Coefficient::Const { .. } => 0.0,
            Coefficient::Linear { slope } | Coefficient::Affine { slope, .. } => *slope,
            Coefficient::Sin { amplitude, .. } => amplitude * v.cos(),
            Coefficient::Table { xs, ys } => {
                let i = table_segment(xs, v);
                (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Zero | Coefficient::Const { .. })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Zero => true,
            Coefficient::Const { value } => *value == 0.0,
            _ => false,
        }
    }

    /// Affine in `v` (including constants).
    pub fn is_affine(&self) -> bool {
        matches!(
            self,
            Coefficient::Zero | Coefficient::Const { .. } | Coefficient::Linear { .. } | Coefficient::Affine { .. }
        )
    }
}

fn table_segment(xs: &[f64], v: f64) -> usize {
    xs.partition_point(|&x| x <= v).clamp(1, xs.len() - 1) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub sigma: Coefficient,
    pub drift: Coefficient,
}

impl Coefficients {
    pub fn new(sigma: Coefficient, drift: Coefficient) -> Self {
        Coefficients { sigma, drift }
    }

    /// Constant `σ` and zero drift: the solution is Gaussian.
    pub fn is_additive_linear(&self) -> bool {
        self.sigma.is_constant() && self.drift.is_zero()
    }
}

/// Everything the integrator needs apart from the coefficients and the noise path.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub kernel: Kernel,
    pub measure: DiscreteSpectralMeasure,
    pub steps: usize,
    pub dt: f64,
    pub mollifier: Option<Mollifier>,
}

impl SolverConfig {
    pub fn new(measure: DiscreteSpectralMeasure, steps: usize, horizon: f64) -> Result<Self> {
        require(steps >= 1, "N_t", "need at least one time step")?;
        require(horizon.is_finite() && horizon > 0.0, "T", "horizon must be positive")?;
        Ok(SolverConfig {
            kernel: Kernel::Wave,
            measure,
            steps,
            dt: horizon / steps as f64,
            mollifier: None,
        })
    }

    pub fn with_mollifier(&self, m: Option<Mollifier>) -> Self {
        let mut c = self.clone();
        c.mollifier = m;
        c
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.measure.grid
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn sample(&self, seed: u64, replica: u64) -> Result<NoiseIncrements> {
        sample_increments(&self.measure, self.steps, self.dt, seed, replica)
    }
}

/// Lattice frames `u(t_i, ·)` for `i = 0..=N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub grid: TorusGrid,
    pub steps: usize,
    pub dt: f64,
    pub key: NoiseKey,
    pub generation: u64,
    frames: Vec<f64>,
}

impl SolutionField {
    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn at(&self, i: usize, m: usize) -> f64 {
        self.frames[i * self.grid.len() + m]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    /// Little-endian binary dump: the noise header fields followed by every frame.
    pub fn write_binary(&self, out: &mut impl std::io::Write, digest: &[u8; 32]) -> Result<()> {
        out.write_all(b"SWFIELD1")?;
        crate::noise::write_header(out, &self.grid, self.steps, self.dt, self.key.seed, digest)?;
        out.write_all(&self.key.replica.to_le_bytes())?;
        for v in &self.frames {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(input: &mut impl std::io::Read) -> Result<(SolutionField, [u8; 32])> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != b"SWFIELD1" {
            return Err(Error::Format("not a solution field file".into()));
        }
        let h = crate::noise::read_header(input)?;
        let replica = crate::noise::read_u64(input)?;
        let count = (h.steps + 1) * h.grid.len();
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            frames.push(crate::noise::read_f64(input)?);
        }
        Ok((
            SolutionField {
                grid: h.grid,
                steps: h.steps,
                dt: h.dt,
                key: NoiseKey { seed: h.seed, replica },
                generation: 0,
                frames,
            },
            h.digest,
        ))
    }
}

/// Forcing `f_j` entering the recursion at step `j`.
pub enum Forcing {
    None,
    /// Lattice values.
    Physical(Vec<f64>),
    /// Unnormalized DFT of the lattice values.
    Spectral(Vec<Complex64>),
}

/// Causal spectral convolution engine: `y_i = Σ_{j<i} Λ(t_i − t_j) ∗ f_j`.
pub struct Stepper {
    pub grid: TorusGrid,
    pub fft: LatticeFft,
    kernel: Kernel,
    steps: usize,
    dt: f64,
    mult: Vec<f64>,
    radius: Vec<f64>,
    direct: Vec<bool>,
    cos_t: Vec<f64>,
    sin_t: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: &SolverConfig) -> Self {
        let grid = cfg.grid().clone();
        let len = grid.len();
        let mult = mollifier_multipliers(cfg.mollifier.as_ref(), &grid);
        let radius = grid.xi_norms().to_vec();
        let horizon = cfg.horizon();
        let wave = matches!(cfg.kernel, Kernel::Wave);
        let direct: Vec<bool> = radius.iter().map(|&r| !wave || 2.0 * PI * r * horizon.max(cfg.dt) < 0.1 || r == 0.0).collect();
        let mut cos_t = vec![0.0; (cfg.steps + 1) * len];
        let mut sin_t = vec![0.0; (cfg.steps + 1) * len];
        for i in 0..=cfg.steps {
            let t = i as f64 * cfg.dt;
            for f in 0..len {
                let (s, c) = (2.0 * PI * t * radius[f]).sin_cos();
                cos_t[i * len + f] = c;
                sin_t[i * len + f] = s;
            }
        }
        Stepper {
            fft: LatticeFft::new(&grid),
            grid,
            kernel: cfg.kernel.clone(),
            steps: cfg.steps,
            dt: cfg.dt,
            mult,
            radius,
            direct,
            cos_t,
            sin_t,
        }
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.mult
    }

    /// Transform of the mollified kernel at lag `s` on every mode.
    pub fn kernel_multiplier(&self, s: f64) -> Vec<f64> {
        self.radius
            .iter()
            .zip(&self.mult)
            .map(|(&r, &m)| m * self.kernel.ft(s, r))
            .collect()
    }

    /// Runs the recursion up to frame `last` (inclusive). `forcing(j, y_j)` supplies `f_j`.
    pub fn run(
        &self,
        last: usize,
        mut forcing: impl FnMut(usize, &[f64]) -> Result<Forcing>,
    ) -> Result<Vec<f64>> {
        let len = self.grid.len();
        let mut frames = vec![0.0; (last + 1) * len];
        let mut acc_c = vec![Complex64::default(); len];
        let mut acc_s = vec![Complex64::default(); len];
        let direct_modes: Vec<usize> = (0..len).filter(|&f| self.direct[f]).collect();
        let mut history: Vec<Vec<Complex64>> = Vec::new();
        let scale = 1.0 / len as f64;
        let mut spec = vec![Complex64::default(); len];
        for j in 0..last {
            let f_hat = match forcing(j, &frames[j * len..(j + 1) * len])? {
                Forcing::None => None,
                Forcing::Physical(v) => Some(self.fft.forward_real(&v)),
                Forcing::Spectral(v) => Some(v),
            };
            let row = j * len;
            match f_hat {
                Some(fh) => {
                    for f in 0..len {
                        if !self.direct[f] {
                            acc_c[f] += fh[f] * self.cos_t[row + f];
                            acc_s[f] += fh[f] * self.sin_t[row + f];
                        }
                    }
                    history.push(direct_modes.iter().map(|&f| fh[f]).collect());
                }
                None => history.push(vec![Complex64::default(); direct_modes.len()]),
            }
            let i = j + 1;
            let t = i as f64 * self.dt;
            let rowi = i * len;
            for f in 0..len {
                if !self.direct[f] {
                    let r = self.radius[f];
                    spec[f] = (acc_c[f] * self.sin_t[rowi + f] - acc_s[f] * self.cos_t[rowi + f])
                        * (self.mult[f] / (2.0 * PI * r));
                }
            }
            for (slot, &f) in direct_modes.iter().enumerate() {
                let r = self.radius[f];
                let mut s = Complex64::default();
                for (jj, h) in history.iter().enumerate() {
                    s += h[slot] * self.kernel.ft(t - jj as f64 * self.dt, r);
                }
                spec[f] = s * self.mult[f];
            }
            let mut buf = spec.clone();
            self.fft.inverse(&mut buf);
            let out = &mut frames[rowi..rowi + len];
            let mut worst: f64 = 0.0;
            for (o, c) in out.iter_mut().zip(&buf) {
                *o = c.re * scale;
                worst = worst.max(o.abs());
                if !o.is_finite() {
                    worst = f64::INFINITY;
                }
            }
            if worst > BLOWUP {
                return Err(Error::Blowup {
                    step: i,
                    magnitude: worst,
                });
            }
        }
        Ok(frames)
    }

    /// Transposed recursion for a linear functional of frame `last`.
    ///
    /// With `μ_last = seed`, computes `ν_j = Σ_{j<l≤last} Λ(t_l − t_j) ∗ μ_l` for
    /// `j = last−1, …, 0` and hands each to `apply(j, ν_j)`, which returns `μ_j` (or `None` for
    /// zero). The kernel is even, so convolution is its own transpose.
    pub fn run_adjoint(
        &self,
        last: usize,
        seed: &[f64],
        mut apply: impl FnMut(usize, &[f64]) -> Result<Option<Vec<f64>>>,
    ) -> Result<()> {
        let len = self.grid.len();
        let scale = 1.0 / len as f64;
        let direct_modes: Vec<usize> = (0..len).filter(|&f| self.direct[f]).collect();
        let mut acc_p = vec![Complex64::default(); len];
        let mut acc_q = vec![Complex64::default(); len];
        let mut history: Vec<(usize, Vec<Complex64>)> = Vec::new();
        let push = |l: usize,
                    mu_hat: &[Complex64],
                    p: &mut [Complex64],
                    q: &mut [Complex64],
                    history: &mut Vec<(usize, Vec<Complex64>)>| {
            let row = l * len;
            for f in 0..len {
                if !self.direct[f] {
                    p[f] += mu_hat[f] * self.sin_t[row + f];
                    q[f] += mu_hat[f] * self.cos_t[row + f];
                }
            }
            history.push((l, direct_modes.iter().map(|&f| mu_hat[f]).collect()));
        };
        push(last, &self.fft.forward_real(seed), &mut acc_p, &mut acc_q, &mut history);
        let mut spec = vec![Complex64::default(); len];
        let mut nu = vec![0.0; len];
        for j in (0..last).rev() {
            let row = j * len;
            for f in 0..len {
                if !self.direct[f] {
                    let r = self.radius[f];
                    spec[f] = (acc_p[f] * self.cos_t[row + f] - acc_q[f] * self.sin_t[row + f])
                        * (self.mult[f] / (2.0 * PI * r));
                }
            }
            let tj = j as f64 * self.dt;
            for (slot, &f) in direct_modes.iter().enumerate() {
                let r = self.radius[f];
                let mut s = Complex64::default();
                for (l, h) in &history {
                    s += h[slot] * self.kernel.ft(*l as f64 * self.dt - tj, r);
                }
                spec[f] = s * self.mult[f];
            }
            let mut buf = spec.clone();
            self.fft.inverse(&mut buf);
            for (o, c) in nu.iter_mut().zip(&buf) {
                *o = c.re * scale;
            }
            if let Some(mu) = apply(j, &nu)? {
                push(j, &self.fft.forward_real(&mu), &mut acc_p, &mut acc_q, &mut history);
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Trapezoid weight of node `j` in the drift sum.
#[inline]
pub fn drift_weight(j: usize) -> f64 {
    if j == 0 {
        0.5
    } else {
        1.0
    }
}

/// Forcing `σ(u_j) ΔM_j + ω_j Δt b(u_j)`, computed in Fourier space where possible.
pub(crate) fn mild_forcing(
    stepper: &Stepper,
    measure: &DiscreteSpectralMeasure,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    j: usize,
    u: &[f64],
) -> Forcing {
    let len = stepper.grid.len();
    let dt = noise.dt;
    let wdt = drift_weight(j) * dt;
    if coeffs.sigma.is_constant() && coeffs.drift.is_constant() {
        let sigma = coeffs.sigma.value(0.0);
        let mut spec = noise.field_spectrum(measure, j);
        for c in &mut spec {
            *c *= sigma;
        }
        spec[0] += wdt * coeffs.drift.value(0.0) * len as f64;
        return Forcing::Spectral(spec);
    }
    let dm = crate::noise::realize_field_increment(noise, j, measure, &stepper.fft).expect("noise matches grid");
    Forcing::Physical(
        u.iter()
            .zip(&dm)
            .map(|(&v, &m)| coeffs.sigma.value(v) * m + wdt * coeffs.drift.value(v))
            .collect(),
    )
}

fn check_noise(cfg: &SolverConfig, noise: &NoiseIncrements) -> Result<()> {
    cfg.grid().ensure_same(&noise.grid)?;
    require(noise.steps == cfg.steps, "N_t", "noise has a different number of steps")?;
    require((noise.dt - cfg.dt).abs() <= 1e-15 * cfg.dt, "dt", "noise has a different time step")?;
    cfg.kernel.validate()?;
    Ok(())
}

fn wrap(cfg: &SolverConfig, noise: &NoiseIncrements, frames: Vec<f64>) -> SolutionField {
    SolutionField {
        grid: cfg.grid().clone(),
        steps: cfg.steps,
        dt: cfg.dt,
        key: noise.key,
        generation: noise.generation,
        frames,
    }
}

/// Mild solution by direct causal recursion.
pub fn solve_mild(cfg: &SolverConfig, coeffs: &Coefficients, noise: &NoiseIncrements) -> Result<SolutionField> {
    check_noise(cfg, noise)?;
    coeffs.sigma.validate()?;
    coeffs.drift.validate()?;
    let stepper = Stepper::new(cfg);
    solve_with(&stepper, cfg, coeffs, noise)
}

/// [`solve_mild`] with a prebuilt stepper, for loops over many replicas.
pub fn solve_with(stepper: &Stepper, cfg: &SolverConfig, coeffs: &Coefficients, noise: &NoiseIncrements) -> Result<SolutionField> {
    let frames = stepper.run(cfg.steps, |j, u| Ok(mild_forcing(stepper, &cfg.measure, coeffs, noise, j, u)))?;
    Ok(wrap(cfg, noise, frames))
}

/// Picard iteration `u^{(m+1)} = Φ(u^{(m)})` from `u^{(0)} = 0`. Because the recursion is
/// causal, `depth ≥ N_t` reproduces [`solve_mild`].
pub fn solve_picard(cfg: &SolverConfig, coeffs: &Coefficients, noise: &NoiseIncrements, depth: usize) -> Result<SolutionField> {
    check_noise(cfg, noise)?;
    let stepper = Stepper::new(cfg);
    let len = cfg.grid().len();
    let mut iterate = vec![0.0; (cfg.steps + 1) * len];
    for _ in 0..depth {
        let prev = iterate;
        iterate = stepper.run(cfg.steps, |j, _| {
            Ok(mild_forcing(&stepper, &cfg.measure, coeffs, noise, j, &prev[j * len..(j + 1) * len]))
        })?;
    }
    Ok(wrap(cfg, noise, iterate))
}

/// Which terms of the shifted equation see the shifted solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftVariant {
    /// Stochastic and drift terms use `u`; only the `h`-term uses `σ(u^h)`.
    Verbatim,
    /// Every term uses `u^h`: the solution driven by the translated noise `ω + h`.
    AllTerms,
}

/// Solution `u^h` of the equation shifted in direction `h ∈ 𝓗_T`.
pub fn solve_shifted(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    basis: &ConsBasis,
    h: &HtVector,
    variant: ShiftVariant,
) -> Result<SolutionField> {
    check_noise(cfg, noise)?;
    let stepper = Stepper::new(cfg);
    let u = solve_with(&stepper, cfg, coeffs, noise)?;
    shifted_from(&stepper, cfg, coeffs, noise, basis, &u, h, variant)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn shifted_from(
    stepper: &Stepper,
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    basis: &ConsBasis,
    u: &SolutionField,
    h: &HtVector,
    variant: ShiftVariant,
) -> Result<SolutionField> {
    require(h.steps == cfg.steps && h.basis_len == basis.len(), "h", "direction shape does not match")?;
    if h.coeffs.iter().all(|&c| c == 0.0) {
        return Ok(u.clone());
    }
    match variant {
        ShiftVariant::AllTerms => {
            let shifted = noise.shifted(basis, h)?;
            solve_with(stepper, cfg, coeffs, &shifted)
        }
        ShiftVariant::Verbatim => {
            let len = cfg.grid().len();
            let shaped: Vec<Option<Vec<f64>>> = (0..cfg.steps)
                .map(|j| {
                    let row = h.row(j);
                    if row.iter().all(|&c| c == 0.0) {
                        None
                    } else {
                        Some(basis.shaped_field(row, &cfg.measure, &stepper.fft))
                    }
                })
                .collect();
            let correction = stepper.run(cfg.steps, |j, c| {
                Ok(match &shaped[j] {
                    None => Forcing::None,
                    Some(hf) => {
                        let base = u.frame(j);
                        Forcing::Physical(
                            (0..len)
                                .map(|m| coeffs.sigma.value(base[m] + c[m]) * cfg.dt * hf[m])
                                .collect(),
                        )
                    }
                })
            })?;
            let frames = u.frames.iter().zip(&correction).map(|(a, b)| a + b).collect();
            let mut out = wrap(cfg, noise, frames);
            out.generation = noise.generation + 1;
            Ok(out)
        }
    }
}

/// Mollified solution `u_n`, driven by `G_n = G ∗ ζ_n` in every term.
pub fn solve_mollified(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    mollifier: Mollifier,
) -> Result<SolutionField> {
    solve_mild(&cfg.with_mollifier(Some(mollifier)), coeffs, noise)
}

/// Supremum over `(t, x)` of a Monte Carlo mean, with the standard error at the maximizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupEstimate {
    pub estimate: Estimate,
    pub step: usize,
    pub point: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentLevel {
    pub mollifier: Option<Mollifier>,
    pub sup_second_moment: SupEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub levels: Vec<MomentLevel>,
    /// Unmollified reference.
    pub reference: SupEstimate,
    /// `∫_0^T (J₁ + J₂)` on the lattice.
    pub kernel_integral: f64,
    /// Smallest `C` with `sup Ê[u_n²] ≤ C exp(C ∫(J₁+J₂))` for every level.
    pub gronwall_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub mollifier: Mollifier,
    pub sup_mean_sq_error: SupEstimate,
}

/// Per-cell sums of a scalar observable over a block of replicas.
#[derive(Debug, Clone)]
pub(crate) struct CellSums {
    pub n: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl CellSums {
    pub fn new(cells: usize) -> Self {
        CellSums {
            n: 0,
            sum: vec![0.0; cells],
            sum_sq: vec![0.0; cells],
        }
    }

    pub fn add(&mut self, values: impl Iterator<Item = f64>) {
        self.n += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(values) {
            *s += v;
            *q += v * v;
        }
    }

    pub fn merge(&mut self, other: &CellSums) {
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    pub fn sup(&self, len: usize) -> SupEstimate {
        let n = self.n as f64;
        let mut best = 0;
        for c in 0..self.sum.len() {
            if self.sum[c] > self.sum[best] {
                best = c;
            }
        }
        let mean = self.sum[best] / n;
        let var = ((self.sum_sq[best] / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
        SupEstimate {
            estimate: Estimate {
                mean,
                se: (var / n).sqrt(),
                n: self.n,
            },
            step: best / len,
            point: best % len,
        }
    }
}

/// `sup_{(t,x)} Ê[u_n(t,x)²]` for each mollifier level on paired noise paths.
pub fn moment_report(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    schedule: &[Mollifier],
    workers: usize,
) -> Result<MomentReport> {
    require(replicas >= 2, "replicas", "need at least two replicas")?;
    let levels: Vec<Option<Mollifier>> = std::iter::once(None).chain(schedule.iter().copied().map(Some)).collect();
    let steppers: Vec<Stepper> = levels.iter().map(|m| Stepper::new(&cfg.with_mollifier(*m))).collect();
    let cells = (cfg.steps + 1) * cfg.grid().len();
    let parts = par::map_chunks(replicas, workers, |range| -> Result<Vec<CellSums>> {
        let mut sums = vec![CellSums::new(cells); levels.len()];
        for r in range {
            let noise = cfg.sample(seed, r as u64)?;
            for (l, st) in steppers.iter().enumerate() {
                let c = cfg.with_mollifier(levels[l]);
                let u = solve_with(st, &c, coeffs, &noise)?;
                sums[l].add(u.frames().iter().map(|v| v * v));
            }
        }
        Ok(sums)
    });
    let mut total = vec![CellSums::new(cells); levels.len()];
    for p in parts {
        for (t, s) in total.iter_mut().zip(p?) {
            t.merge(&s);
        }
    }
    let len = cfg.grid().len();
    let sups: Vec<SupEstimate> = total.iter().map(|s| s.sup(len)).collect();
    let kernel_integral = kernel_integral(cfg)?;
    let worst = sups.iter().map(|s| s.estimate.mean).fold(0.0, f64::max);
    Ok(MomentReport {
        reference: sups[0].clone(),
        levels: levels[1..]
            .iter()
            .zip(&sups[1..])
            .map(|(m, s)| MomentLevel {
                mollifier: *m,
                sup_second_moment: s.clone(),
            })
            .collect(),
        kernel_integral,
        gronwall_constant: gronwall_constant(worst, kernel_integral),
    })
}

/// `∫_0^T (J₁ + J₂)(s) ds` with `J₁` searched over the lattice shifts.
pub fn kernel_integral(cfg: &SolverConfig) -> Result<f64> {
    let search = crate::kernels::EtaSearch::lattice();
    let nodes = crate::kernels::TimeRule::Simpson { panels: 16 }.nodes(cfg.horizon());
    let mut total = 0.0;
    for (s, w) in nodes {
        let j1 = crate::kernels::j1(s, &cfg.kernel, &cfg.measure, &search)?.value;
        total += w * (j1 + cfg.kernel.sup_sq(s));
    }
    Ok(total)
}

/// Smallest `C ≥ 0` with `C e^{C a} ≥ m`.
pub fn gronwall_constant(m: f64, a: f64) -> f64 {
    if m <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, m.max(1.0));
    while hi * (hi * a).exp() < m {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * (mid * a).exp() >= m {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `sup_{(t,x)} Ê|u_n − u|²` for each level, `u` being the unmollified solution on the same path.
pub fn convergence_report(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    schedule: &[Mollifier],
    workers: usize,
) -> Result<Vec<ConvergenceLevel>> {
    require(replicas >= 2, "replicas", "need at least two replicas")?;
    let base = cfg.with_mollifier(None);
    let reference = Stepper::new(&base);
    let steppers: Vec<Stepper> = schedule.iter().map(|m| Stepper::new(&cfg.with_mollifier(Some(*m)))).collect();
    let cells = (cfg.steps + 1) * cfg.grid().len();
    let parts = par::map_chunks(replicas, workers, |range| -> Result<Vec<CellSums>> {
        let mut sums = vec![CellSums::new(cells); schedule.len()];
        for r in range {
            let noise = cfg.sample(seed, r as u64)?;
            let u = solve_with(&reference, &base, coeffs, &noise)?;
            for (l, st) in steppers.iter().enumerate() {
                let un = solve_with(st, &cfg.with_mollifier(Some(schedule[l])), coeffs, &noise)?;
                sums[l].add(un.frames().iter().zip(u.frames()).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Ok(sums)
    });
    let mut total = vec![CellSums::new(cells); schedule.len()];
    for p in parts {
        for (t, s) in total.iter_mut().zip(p?) {
            t.merge(&s);
        }
    }
    let len = cfg.grid().len();
    Ok(schedule
        .iter()
        .zip(&total)
        .map(|(m, s)| ConvergenceLevel {
            mollifier: *m,
            sup_mean_sq_error: s.sup(len),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionStationarity {
    /// `E[u(t,x) u(t,x+y)]`.
    pub u: StationarityReport,
    /// `E[B(u(t,x)) B(u(t,x+y))]`.
    pub bu: StationarityReport,
}

/// `x`-independence of the covariances of `u(t,·)` and `B(u(t,·))` over every lattice shift.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_check(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    step: usize,
    b: fn(f64) -> f64,
    family_alpha: f64,
    workers: usize,
) -> Result<SolutionStationarity> {
    require(step <= cfg.steps, "t", "target step is off the time grid")?;
    let grid = cfg.grid().clone();
    let shifts: Vec<usize> = (0..grid.len()).collect();
    let stepper = Stepper::new(cfg);
    let frames = par::map_replicas(replicas, workers, |r| -> Result<Vec<f64>> {
        let noise = cfg.sample(seed, r as u64)?;
        Ok(solve_with(&stepper, cfg, coeffs, &noise)?.frame(step).to_vec())
    });
    let mut acc_u = StationarityAccumulator::new(&grid, 1, &shifts);
    let mut acc_b = StationarityAccumulator::new(&grid, 1, &shifts);
    for f in frames {
        let f = f?;
        let g: Vec<f64> = f.iter().map(|&v| b(v)).collect();
        acc_u.add(|_, x, y| f[x] * f[y]);
        acc_b.add(|_, x, y| g[x] * g[y]);
    }
    Ok(SolutionStationarity {
        u: acc_u.finish(family_alpha),
        bu: acc_b.finish(family_alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{discretize_measure, SpectralMeasureSpec};

    fn config(spec: SpectralMeasureSpec, d: usize, k: usize, steps: usize) -> SolverConfig {
        let grid = TorusGrid::new(d, 1.0, k).unwrap();
        SolverConfig::new(discretize_measure(&spec, &grid).unwrap(), steps, 1.0).unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let cfg = config(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 2, 8);
        let noise = cfg.sample(1, 0).unwrap();
        let u = solve_mild(&cfg, &Coefficients::new(Coefficient::Zero, Coefficient::Zero), &noise).unwrap();
        assert!(u.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_drift_without_noise_solves_the_ode() {
        // σ = 0, b ≡ c: u(t) = Σ_j ω_j Δt c (t − t_j), which is exact for the trapezoid rule.
        let cfg = config(SpectralMeasureSpec::Lebesgue, 1, 2, 16);
        let noise = cfg.sample(1, 0).unwrap();
        let u = solve_mild(&cfg, &Coefficients::new(Coefficient::Zero, Coefficient::Const { value: 2.0 }), &noise).unwrap();
        for i in 0..=16 {
            let t = i as f64 / 16.0;
            for m in 0..cfg.grid().len() {
                assert!((u.at(i, m) - t * t).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn accumulator_matches_direct_double_sum() {
        let cfg = config(SpectralMeasureSpec::Riesz { beta: 1.5 }, 2, 2, 12);
        let noise = cfg.sample(5, 3).unwrap();
        let coeffs = Coefficients::new(Coefficient::Affine { intercept: 1.0, slope: 0.3 }, Coefficient::sin());
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let fft = LatticeFft::new(cfg.grid());
        let len = cfg.grid().len();
        let mut frames = vec![vec![0.0; len]];
        for i in 1..=cfg.steps {
            let mut acc = vec![0.0; len];
            for j in 0..i {
                let dm = crate::noise::realize_field_increment(&noise, j, &cfg.measure, &fft).unwrap();
                let f: Vec<f64> = (0..len)
                    .map(|m| {
                        let v = frames[j][m];
                        coeffs.sigma.value(v) * dm[m] + drift_weight(j) * cfg.dt * coeffs.drift.value(v)
                    })
                    .collect();
                let s = (i - j) as f64 * cfg.dt;
                let mult: Vec<f64> = cfg.grid().xi_norms().iter().map(|&r| crate::kernels::wave_ft(s, r)).collect();
                for (a, b) in acc.iter_mut().zip(fft.convolve(&f, &mult)) {
                    *a += b;
                }
            }
            frames.push(acc);
        }
        for i in 0..=cfg.steps {
            for m in 0..len {
                assert!((u.at(i, m) - frames[i][m]).abs() < 1e-12, "i={i} m={m}");
            }
        }
    }

    #[test]
    fn picard_at_full_depth_equals_recursion() {
        let cfg = config(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 2, 10);
        let noise = cfg.sample(2, 0).unwrap();
        let coeffs = Coefficients::new(Coefficient::Sin { amplitude: 0.8, offset: 1.0 }, Coefficient::sin());
        let a = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let b = solve_picard(&cfg, &coeffs, &noise, cfg.steps).unwrap();
        for (x, y) in a.frames().iter().zip(b.frames()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn blowup_is_reported() {
        let cfg = config(SpectralMeasureSpec::DiracZero, 1, 1, 64);
        let noise = cfg.sample(1, 0).unwrap();
        let coeffs = Coefficients::new(Coefficient::Zero, Coefficient::Affine { intercept: 1.0, slope: 1e4 });
        assert!(matches!(solve_mild(&cfg, &coeffs, &noise), Err(Error::Blowup { .. })));
    }

    #[test]
    fn zero_shift_is_bit_identical() {
        let cfg = config(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 2, 8);
        let noise = cfg.sample(3, 1).unwrap();
        let coeffs = Coefficients::new(Coefficient::sin(), Coefficient::sin());
        let basis = ConsBasis::new(&cfg.measure);
        let h = HtVector::zeros(cfg.steps, basis.len());
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        for v in [ShiftVariant::Verbatim, ShiftVariant::AllTerms] {
            let uh = solve_shifted(&cfg, &coeffs, &noise, &basis, &h, v).unwrap();
            assert_eq!(uh.frames(), u.frames());
        }
    }

    #[test]
    fn binary_round_trip() {
        let cfg = config(SpectralMeasureSpec::Lebesgue, 1, 2, 4);
        let noise = cfg.sample(3, 1).unwrap();
        let u = solve_mild(&cfg, &Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Zero), &noise).unwrap();
        let mut buf = Vec::new();
        u.write_binary(&mut buf, &[1; 32]).unwrap();
        let (back, _) = SolutionField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.frames(), u.frames());
    }

    #[test]
    fn gronwall_constant_solves_the_equation() {
        let c = gronwall_constant(5.0, 0.7);
        assert!((c * (0.7 * c).exp() - 5.0).abs() < 1e-9);
    }
}
