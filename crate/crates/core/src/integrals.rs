//! Stochastic and pathwise integrals against the discretized noise.
//!
//! Three constructions of the stochastic integral of `Λ(t−s, x−z) Z(s,z)` are provided and
//! must agree path by path: the Fourier-side convolution ([`cd_integral`]), the series over
//! the basis of `𝓗` ([`ito_series_integral`]), and sums of elementary Skorohod integrals
//! ([`skorohod_elementary`]).

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{require, Error, Result};
use crate::fft::LatticeFft;
use crate::grid::TorusGrid;
use crate::kernels::{mollifier_multipliers, Kernel, Mollifier};
use crate::measure::DiscreteSpectralMeasure;
use crate::noise::{lattice_transform, realize_field_increment, ConsBasis, HtVector, NoiseIncrements, NoiseKey};
use crate::solver::{drift_weight, SolutionField};
use crate::stats::Estimate;

/// Space-time target `(t_I, z_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Target {
    pub step: usize,
    pub point: usize,
}

/// A noise path with its realized fields and basis increments.
pub struct NoiseContext<'a> {
    pub noise: &'a NoiseIncrements,
    pub measure: &'a DiscreteSpectralMeasure,
    pub basis: &'a ConsBasis,
    pub fft: LatticeFft,
    fields: Vec<Vec<f64>>,
    increments: Vec<Vec<f64>>,
}

impl<'a> NoiseContext<'a> {
    pub fn new(noise: &'a NoiseIncrements, measure: &'a DiscreteSpectralMeasure, basis: &'a ConsBasis) -> Result<Self> {
        noise.grid.ensure_same(&measure.grid)?;
        require(basis.grid.same_shape(&measure.grid), "basis", "basis and measure grids differ")?;
        let fft = LatticeFft::new(&noise.grid);
        let fields = (0..noise.steps)
            .map(|j| realize_field_increment(noise, j, measure, &fft))
            .collect::<Result<Vec<_>>>()?;
        let increments = (0..noise.steps).map(|j| basis.increments(noise, j)).collect();
        Ok(NoiseContext {
            noise,
            measure,
            basis,
            fft,
            fields,
            increments,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.noise.grid
    }

    pub fn steps(&self) -> usize {
        self.noise.steps
    }

    pub fn dt(&self) -> f64 {
        self.noise.dt
    }

    /// `ΔM_j(z_m)`.
    pub fn field(&self, j: usize) -> &[f64] {
        &self.fields[j]
    }

    /// `ΔW^i_j` for every basis index `i`.
    pub fn increments(&self, j: usize) -> &[f64] {
        &self.increments[j]
    }

    /// Noise strictly before step `j`.
    pub fn past(&self, j: usize) -> PastNoise<'_> {
        PastNoise {
            fields: &self.fields[..j.min(self.fields.len())],
        }
    }
}

/// The increments `ΔM_0, …, ΔM_{j−1}` visible to a causal evaluator at step `j`.
pub struct PastNoise<'a> {
    fields: &'a [Vec<f64>],
}

impl PastNoise<'_> {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, j: usize) -> &[f64] {
        &self.fields[j]
    }
}

/// How an integrand relates to the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Adaptation {
    Deterministic,
    /// Built causally from this path.
    Path { key: NoiseKey, generation: u64 },
    /// Arbitrary values with no causality guarantee; accepted only by pathwise integrals.
    Unchecked,
}

/// Lattice process `Z(t_j, z_m)` for `j = 0..rows`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptedIntegrand {
    pub grid: TorusGrid,
    rows: usize,
    values: Vec<f64>,
    adaptation: Adaptation,
}

impl AdaptedIntegrand {
    fn build(grid: &TorusGrid, rows: usize, values: Vec<f64>, adaptation: Adaptation) -> Result<Self> {
        require(values.len() == rows * grid.len(), "Z", "value count does not match rows × lattice")?;
        Ok(AdaptedIntegrand {
            grid: grid.clone(),
            rows,
            values,
            adaptation,
        })
    }

    pub fn deterministic(grid: &TorusGrid, rows: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, rows, values, Adaptation::Deterministic)
    }

    pub fn constant(grid: &TorusGrid, rows: usize, c: f64) -> Self {
        Self::build(grid, rows, vec![c; rows * grid.len()], Adaptation::Deterministic).unwrap()
    }

    pub fn unchecked(grid: &TorusGrid, rows: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, rows, values, Adaptation::Unchecked)
    }

    /// Rows `0..=N_t` produced by `f(j, past)`, which only sees the noise before step `j`.
    pub fn from_causal(ctx: &NoiseContext, mut f: impl FnMut(usize, &PastNoise) -> Vec<f64>) -> Result<Self> {
        let len = ctx.grid().len();
        let rows = ctx.steps() + 1;
        let mut values = Vec::with_capacity(rows * len);
        for j in 0..rows {
            let row = f(j, &ctx.past(j));
            require(row.len() == len, "Z", "causal evaluator returned a row of the wrong size")?;
            values.extend(row);
        }
        Self::build(
            ctx.grid(),
            rows,
            values,
            Adaptation::Path {
                key: ctx.noise.key,
                generation: ctx.noise.generation,
            },
        )
    }

    /// `f(u(t_j, z_m))` for a solution of the causal recursion.
    pub fn from_solution(u: &SolutionField, f: impl Fn(f64) -> f64) -> Self {
        AdaptedIntegrand {
            grid: u.grid.clone(),
            rows: u.steps + 1,
            values: u.frames().iter().map(|&v| f(v)).collect(),
            adaptation: Adaptation::Path {
                key: u.key,
                generation: u.generation,
            },
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn adaptation(&self) -> Adaptation {
        self.adaptation
    }

    /// Same adaptation, new values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        AdaptedIntegrand {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Rejects integrands that are not known to be adapted to `noise`.
    pub fn ensure_adapted(&self, noise: &NoiseIncrements) -> Result<()> {
        self.grid.ensure_same(&noise.grid)?;
        match self.adaptation {
            Adaptation::Deterministic => Ok(()),
            Adaptation::Path { key, generation } if key == noise.key && generation == noise.generation => Ok(()),
            _ => Err(Error::NotAdapted),
        }
    }
}

/// Finitely many adapted coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HilbertIntegrand {
    pub coords: Vec<AdaptedIntegrand>,
}

/// `e^{2πi ξ_k·x}` on every mode.
pub fn point_phases(grid: &TorusGrid, point: usize) -> Vec<Complex64> {
    let p = grid.point(point);
    let n = grid.per_axis() as f64;
    let mut k = vec![0i64; grid.dim()];
    (0..grid.len())
        .map(|f| {
            grid.mode_into(f, &mut k);
            let dot: i64 = k.iter().zip(&p).map(|(&a, &b)| a * b as i64).sum();
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * dot as f64 / n)
        })
        .collect()
}

/// Multiplier `𝓕Λ(s)(ξ_k) 𝓕ζ(ξ_k)`.
pub fn kernel_multiplier(kernel: &Kernel, s: f64, moll: &[f64], grid: &TorusGrid) -> Vec<f64> {
    grid.xi_norms().iter().zip(moll).map(|(&r, &m)| m * kernel.ft(s, r)).collect()
}

/// Lattice function whose transform is `mult` exactly.
pub fn lattice_kernel(mult: &[f64], grid: &TorusGrid, fft: &LatticeFft) -> Vec<f64> {
    let mut buf: Vec<Complex64> = mult.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    fft.inverse(&mut buf);
    let vol = grid.side().powi(grid.dim() as i32);
    buf.iter().map(|c| c.re / vol).collect()
}

/// Index of `z_a − z_b` on the lattice.
pub fn point_difference(grid: &TorusGrid, a: usize, b: usize) -> usize {
    let n = grid.per_axis();
    let pa = grid.point(a);
    let pb = grid.point(b);
    let diff: Vec<usize> = pa.iter().zip(&pb).map(|(&x, &y)| (x + n - y) % n).collect();
    grid.point_index(&diff)
}

fn check_target(grid: &TorusGrid, steps: usize, target: Target) -> Result<()> {
    require(target.step <= steps, "t", "target time is off the time grid")?;
    require(target.point < grid.len(), "x", "target point is off the lattice")
}

/// `Σ_{j<I} [Λ_n(t_I − t_j) ∗ (Z_j ΔM_j)](x)` with each convolution done in Fourier space.
pub fn cd_integral(
    kernel: &Kernel,
    mollifier: Option<&Mollifier>,
    z: &AdaptedIntegrand,
    ctx: &NoiseContext,
    target: Target,
) -> Result<f64> {
    z.ensure_adapted(ctx.noise)?;
    let grid = ctx.grid();
    check_target(grid, ctx.steps(), target)?;
    require(z.rows() >= target.step, "Z", "integrand does not cover the window")?;
    let moll = mollifier_multipliers(mollifier, grid);
    let phases = point_phases(grid, target.point);
    let dt = ctx.dt();
    let t = target.step as f64 * dt;
    let mut total = crate::stats::CompensatedSum::default();
    for j in 0..target.step {
        let prod: Vec<f64> = z.row(j).iter().zip(ctx.field(j)).map(|(a, b)| a * b).collect();
        let spec = ctx.fft.forward_real(&prod);
        let mult = kernel_multiplier(kernel, t - j as f64 * dt, &moll, grid);
        let s: f64 = (0..grid.len()).map(|f| mult[f] * (spec[f] * phases[f]).re).sum();
        total.add(s / grid.len() as f64);
    }
    Ok(total.value())
}

/// Coordinatewise [`cd_integral`].
pub fn hilbert_cd_integral(
    kernel: &Kernel,
    mollifier: Option<&Mollifier>,
    z: &HilbertIntegrand,
    ctx: &NoiseContext,
    target: Target,
) -> Result<Vec<f64>> {
    require(!z.coords.is_empty(), "Z", "no coordinates")?;
    z.coords.iter().map(|c| cd_integral(kernel, mollifier, c, ctx, target)).collect()
}

/// `Φ_j(z) = Λ_n(t_I − t_j, x − z) Z_j(z)` for `j < I` and zero afterwards.
pub fn target_integrand(
    kernel: &Kernel,
    mollifier: Option<&Mollifier>,
    z: &AdaptedIntegrand,
    dt: f64,
    target: Target,
) -> Result<AdaptedIntegrand> {
    let grid = &z.grid;
    require(z.rows() >= target.step, "Z", "integrand does not cover the window")?;
    let len = grid.len();
    let fft = LatticeFft::new(grid);
    let moll = mollifier_multipliers(mollifier, grid);
    let t = target.step as f64 * dt;
    let offsets: Vec<usize> = (0..len).map(|m| point_difference(grid, target.point, m)).collect();
    let mut values = vec![0.0; z.rows() * len];
    for j in 0..target.step {
        let g = lattice_kernel(&kernel_multiplier(kernel, t - j as f64 * dt, &moll, grid), grid, &fft);
        for m in 0..len {
            values[j * len + m] = g[offsets[m]] * z.row(j)[m];
        }
    }
    Ok(AdaptedIntegrand {
        values,
        ..z.clone()
    })
}

/// `Σ_j Σ_i ⟨Φ_j, e_i⟩_𝓗 ΔW^i_j` over the rows `j < N_t` of `Φ`.
pub fn ito_series_integral(phi: &AdaptedIntegrand, ctx: &NoiseContext) -> Result<f64> {
    phi.ensure_adapted(ctx.noise)?;
    require(!ctx.basis.is_empty(), "basis", "empty basis")?;
    let grid = ctx.grid();
    let mut total = crate::stats::CompensatedSum::default();
    for j in 0..phi.rows().min(ctx.steps()) {
        let row = phi.row(j);
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let coeffs = ctx.basis.coefficients(&lattice_transform(row, grid, &ctx.fft));
        let s: f64 = coeffs.iter().zip(ctx.increments(j)).map(|(c, w)| c * w).sum();
        total.add(s);
    }
    Ok(total.value())
}

/// A random variable given as a function of the noise path.
pub trait WienerFunctional: Send + Sync {
    fn value(&self, ctx: &NoiseContext) -> f64;
    /// `⟨DX, h⟩_{𝓗_T}`.
    fn directional(&self, ctx: &NoiseContext, h: &HtVector) -> f64;
    /// Number of leading steps whose noise the functional may read.
    fn horizon(&self) -> usize;
}

/// Deterministic value.
pub struct Constant(pub f64);

impl WienerFunctional for Constant {
    fn value(&self, _: &NoiseContext) -> f64 {
        self.0
    }
    fn directional(&self, _: &NoiseContext, _: &HtVector) -> f64 {
        0.0
    }
    fn horizon(&self) -> usize {
        0
    }
}

/// `F(g) = Σ_{j,i} g_{ji} ΔW^i_j`, the first-chaos element of `g ∈ 𝓗_T`.
pub struct FirstChaos(pub HtVector);

impl WienerFunctional for FirstChaos {
    fn value(&self, ctx: &NoiseContext) -> f64 {
        (0..self.0.steps)
            .map(|j| self.0.row(j).iter().zip(ctx.increments(j)).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
    fn directional(&self, ctx: &NoiseContext, h: &HtVector) -> f64 {
        self.0.dot(h, ctx.dt())
    }
    fn horizon(&self) -> usize {
        (0..self.0.steps)
            .rev()
            .find(|&j| self.0.row(j).iter().any(|&c| c != 0.0))
            .map_or(0, |j| j + 1)
    }
}

/// `Σ_j r_j ΔM_j(z_m)`.
pub struct PointNoise {
    pub point: usize,
    pub weights: Vec<f64>,
}

impl WienerFunctional for PointNoise {
    fn value(&self, ctx: &NoiseContext) -> f64 {
        self.weights.iter().enumerate().map(|(j, r)| r * ctx.field(j)[self.point]).sum()
    }
    fn directional(&self, ctx: &NoiseContext, h: &HtVector) -> f64 {
        // Shifting ΔW by εΔt h moves ΔM_j by εΔt times the shaped field of h_j.
        let mut s = 0.0;
        for (j, &r) in self.weights.iter().enumerate() {
            let row = h.row(j);
            if r == 0.0 || row.iter().all(|&c| c == 0.0) {
                continue;
            }
            let shaped = ctx.basis.shaped_field(row, ctx.measure, &ctx.fft);
            s += r * ctx.dt() * shaped[self.point];
        }
        s
    }
    fn horizon(&self) -> usize {
        self.weights.iter().rposition(|&r| r != 0.0).map_or(0, |j| j + 1)
    }
}

/// `scale · f(inner)` with `f` smooth.
pub struct Composed {
    pub inner: Box<dyn WienerFunctional>,
    pub scale: f64,
    pub f: fn(f64) -> f64,
    pub df: fn(f64) -> f64,
}

impl WienerFunctional for Composed {
    fn value(&self, ctx: &NoiseContext) -> f64 {
        self.scale * (self.f)(self.inner.value(ctx))
    }
    fn directional(&self, ctx: &NoiseContext, h: &HtVector) -> f64 {
        let d = self.inner.directional(ctx, h);
        if d == 0.0 {
            return 0.0;
        }
        self.scale * (self.df)(self.inner.value(ctx)) * d
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
}

/// Sum of functionals.
pub struct Sum(pub Vec<Box<dyn WienerFunctional>>);

impl WienerFunctional for Sum {
    fn value(&self, ctx: &NoiseContext) -> f64 {
        self.0.iter().map(|x| x.value(ctx)).sum()
    }
    fn directional(&self, ctx: &NoiseContext, h: &HtVector) -> f64 {
        self.0.iter().map(|x| x.directional(ctx, h)).sum()
    }
    fn horizon(&self) -> usize {
        self.0.iter().map(|x| x.horizon()).max().unwrap_or(0)
    }
}

/// `X · 1_{[t_a, t_b)}(s) 1_A(z)`.
pub struct ElementaryProcess {
    pub start: usize,
    pub end: usize,
    pub set: Vec<usize>,
    pub x: Box<dyn WienerFunctional>,
}

impl ElementaryProcess {
    pub fn validate(&self, grid: &TorusGrid, steps: usize) -> Result<()> {
        require(self.start < self.end && self.end <= steps, "window", "need 0 ≤ a < b ≤ T")?;
        require(!self.set.is_empty(), "A", "lattice subset must be nonempty")?;
        require(self.set.iter().all(|&m| m < grid.len()), "A", "point off the lattice")
    }

    /// Whether `X` only reads the noise before `t_a`.
    pub fn is_adapted(&self) -> bool {
        self.x.horizon() <= self.start
    }

    fn indicator(&self, grid: &TorusGrid) -> Vec<f64> {
        let mut v = vec![0.0; grid.len()];
        for &m in &self.set {
            v[m] = 1.0;
        }
        v
    }

    /// `1_{[t_a,t_b)} 1_A` as an element of the discrete `𝓗_T`.
    pub fn direction(&self, ctx: &NoiseContext) -> HtVector {
        let coeffs = ctx
            .basis
            .coefficients(&lattice_transform(&self.indicator(ctx.grid()), ctx.grid(), &ctx.fft));
        let mut h = HtVector::zeros(ctx.steps(), ctx.basis.len());
        for j in self.start..self.end {
            h.row_mut(j).copy_from_slice(&coeffs);
        }
        h
    }

    /// Noise mass `F(1_{[t_a,t_b)} 1_A) = Σ_j Σ_{m∈A} ΔM_j(z_m) h^d`.
    pub fn window_mass(&self, ctx: &NoiseContext) -> f64 {
        let cell = ctx.grid().cell_volume();
        (self.start..self.end)
            .map(|j| self.set.iter().map(|&m| ctx.field(j)[m]).sum::<f64>() * cell)
            .sum()
    }
}

/// `δ(g) = X F(1_{[a,b)} 1_A) − ⟨DX, 1_{[a,b)} 1_A⟩_{𝓗_T}`.
pub fn skorohod_elementary(g: &ElementaryProcess, ctx: &NoiseContext) -> Result<f64> {
    g.validate(ctx.grid(), ctx.steps())?;
    let x = g.x.value(ctx);
    let mass = g.window_mass(ctx);
    let correction = if g.is_adapted() {
        0.0
    } else {
        g.x.directional(ctx, &g.direction(ctx))
    };
    Ok(x * mass - correction)
}

/// `Σ_{j=0}^{I} ω_j Δt [Λ_n(t_I − t_j) ∗ Z_j](x)`, trapezoidal in time.
pub fn pathwise_integral(
    kernel: &Kernel,
    mollifier: Option<&Mollifier>,
    z: &AdaptedIntegrand,
    dt: f64,
    target: Target,
) -> Result<f64> {
    let grid = &z.grid;
    check_target(grid, usize::MAX, target)?;
    require(z.rows() > target.step, "Z", "integrand does not cover the window")?;
    let fft = LatticeFft::new(grid);
    let moll = mollifier_multipliers(mollifier, grid);
    let phases = point_phases(grid, target.point);
    let t = target.step as f64 * dt;
    let mut total = crate::stats::CompensatedSum::default();
    if target.step == 0 {
        return Ok(0.0);
    }
    for j in 0..=target.step {
        let w = if j == target.step { 0.5 } else { drift_weight(j) };
        let spec = fft.forward_real(z.row(j));
        let mult = kernel_multiplier(kernel, t - j as f64 * dt, &moll, grid);
        let s: f64 = (0..grid.len()).map(|f| mult[f] * (spec[f] * phases[f]).re).sum();
        total.add(w * dt * s / grid.len() as f64);
    }
    Ok(total.value())
}

/// Coordinatewise [`pathwise_integral`].
pub fn hilbert_pathwise_integral(
    kernel: &Kernel,
    mollifier: Option<&Mollifier>,
    z: &HilbertIntegrand,
    dt: f64,
    target: Target,
) -> Result<Vec<f64>> {
    require(!z.coords.is_empty(), "Z", "no coordinates")?;
    z.coords.iter().map(|c| pathwise_integral(kernel, mollifier, c, dt, target)).collect()
}

/// Second-moment bound for the pathwise integral at `t_I`:
/// `(Σ_j ω_j Δt) · sup E[Z²] · Σ_j ω_j Δt J₂(t − t_j)`, Cauchy–Schwarz over the trapezoid nodes
/// followed by `E|Λ ∗ Z|² ≤ J₂ E[Z²]` at each node.
pub fn pathwise_bound(kernel: &Kernel, step: usize, dt: f64, sup_second_moment: f64) -> f64 {
    if step == 0 {
        return 0.0;
    }
    let t = step as f64 * dt;
    let weighted: f64 = (0..=step)
        .map(|j| {
            let w = if j == step { 0.5 } else { drift_weight(j) };
            w * dt * kernel.sup_sq(t - j as f64 * dt)
        })
        .sum();
    t * sup_second_moment * weighted
}

/// Spectral weights `ν̂_j` of the covariance of `Z(t_j, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ZSpectrum {
    /// `Z ≡ c`: `ν = c² δ_0`.
    Constant(f64),
    Empirical {
        /// `ν̂_j(k)` at `[j][k]`.
        rows: Vec<Vec<f64>>,
        replicas: usize,
        clipped_mass: f64,
    },
}

impl ZSpectrum {
    fn weights(&self, j: usize, len: usize) -> Vec<f64> {
        match self {
            ZSpectrum::Constant(c) => {
                let mut v = vec![0.0; len];
                v[0] = c * c;
                v
            }
            ZSpectrum::Empirical { rows, .. } => rows[j].clone(),
        }
    }

    fn row_count(&self) -> usize {
        match self {
            ZSpectrum::Constant(_) => usize::MAX,
            ZSpectrum::Empirical { rows, .. } => rows.len(),
        }
    }

    /// `sup_j Σ_k ν̂_j(k) = sup_s Ê[Z(s,x)²]`.
    pub fn sup_second_moment(&self) -> f64 {
        match self {
            ZSpectrum::Constant(c) => c * c,
            ZSpectrum::Empirical { rows, .. } => rows.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max),
        }
    }
}

/// Accumulates `|DFT Z_j|² / N²` over replicas: the transform of the empirical covariance
/// averaged over lattice shifts, which is nonnegative.
pub struct SpectrumEstimator {
    grid: TorusGrid,
    fft: LatticeFft,
    rows: usize,
    sums: Vec<f64>,
    replicas: usize,
}

impl SpectrumEstimator {
    pub fn new(grid: &TorusGrid, rows: usize) -> Self {
        SpectrumEstimator {
            grid: grid.clone(),
            fft: LatticeFft::new(grid),
            rows,
            sums: vec![0.0; rows * grid.len()],
            replicas: 0,
        }
    }

    pub fn add(&mut self, z: &AdaptedIntegrand) -> Result<()> {
        self.grid.ensure_same(&z.grid)?;
        require(z.rows() >= self.rows, "Z", "replica has too few rows")?;
        let len = self.grid.len();
        let norm = (len * len) as f64;
        for j in 0..self.rows {
            let spec = self.fft.forward_real(z.row(j));
            for (s, c) in self.sums[j * len..(j + 1) * len].iter_mut().zip(&spec) {
                *s += c.norm_sqr() / norm;
            }
        }
        self.replicas += 1;
        Ok(())
    }

    /// Periodogram of one replica. Norms are linear in the spectrum, so the mean of
    /// per-replica norms equals the pooled estimate and comes with a standard error.
    pub fn single(grid: &TorusGrid, rows: usize, z: &AdaptedIntegrand) -> Result<ZSpectrum> {
        let mut e = SpectrumEstimator::new(grid, rows);
        e.add(z)?;
        Ok(ZSpectrum::Empirical {
            rows: e.sums.chunks(grid.len()).map(|r| r.to_vec()).collect(),
            replicas: 1,
            clipped_mass: 0.0,
        })
    }

    pub fn finish(self) -> Result<ZSpectrum> {
        require(self.replicas >= 2, "replicas", "need at least two replicas to estimate ν̂")?;
        let len = self.grid.len();
        let mut clipped = 0.0;
        let rows = self
            .sums
            .chunks(len)
            .map(|r| {
                r.iter()
                    .map(|&s| {
                        let v = s / self.replicas as f64;
                        if v < 0.0 {
                            clipped -= v;
                        }
                        v.max(0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(ZSpectrum::Empirical {
            rows,
            replicas: self.replicas,
            clipped_mass: clipped,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    /// `‖Λ‖²_{0,Z}`.
    pub norm0_sq: f64,
    /// `‖Λ‖²_{1,Z}`.
    pub norm1_sq: f64,
    /// Monte Carlo second moment of the stochastic integral, when sampled.
    pub monte_carlo: Option<Estimate>,
    pub replicas: usize,
    pub clipped_mass: f64,
}

/// Circular convolution `w ⊛ ν` on the mode lattice.
fn convolve_modes(w: &[f64], nu: &[f64], fft: &LatticeFft) -> Vec<f64> {
    let a = fft.forward_real(w);
    let b = fft.forward_real(nu);
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    fft.inverse_real(&prod)
}

/// `Σ_{j<I} Δt Σ_k |𝓕Λ_n(t−t_j)(ξ_k)|² (w ⊛ ν̂_j)(k)` and its pathwise analogue.
pub fn norm_0z(
    kernel: &Kernel,
    mollifier: Option<&Mollifier>,
    z: &ZSpectrum,
    measure: &DiscreteSpectralMeasure,
    step: usize,
    dt: f64,
) -> Result<NormReport> {
    let moll = mollifier_multipliers(mollifier, &measure.grid);
    let norm0_sq = zero_norm(kernel, &moll, z, measure, step, dt)?;
    let grid = &measure.grid;
    let len = grid.len();
    let t = step as f64 * dt;
    let mut norm1 = crate::stats::CompensatedSum::default();
    if step > 0 {
        require(z.row_count() > step, "Z", "spectrum does not cover the window")?;
        for j in 0..=step {
            let w = if j == step { 0.5 } else { drift_weight(j) };
            let nu = z.weights(j, len);
            let mult = kernel_multiplier(kernel, t - j as f64 * dt, &moll, grid);
            norm1.add(w * dt * (0..len).map(|f| mult[f] * mult[f] * nu[f]).sum::<f64>());
        }
    }
    let (replicas, clipped_mass) = match z {
        ZSpectrum::Constant(_) => (0, 0.0),
        ZSpectrum::Empirical { replicas, clipped_mass, .. } => (*replicas, *clipped_mass),
    };
    Ok(NormReport {
        norm0_sq,
        norm1_sq: norm1.value(),
        monte_carlo: None,
        replicas,
        clipped_mass,
    })
}

fn zero_norm(
    kernel: &Kernel,
    multiplier: &[f64],
    z: &ZSpectrum,
    measure: &DiscreteSpectralMeasure,
    step: usize,
    dt: f64,
) -> Result<f64> {
    let grid = &measure.grid;
    let len = grid.len();
    require(z.row_count() >= step, "Z", "spectrum does not cover the window")?;
    let fft = LatticeFft::new(grid);
    let t = step as f64 * dt;
    let mut total = crate::stats::CompensatedSum::default();
    for j in 0..step {
        let mu = match z {
            ZSpectrum::Constant(c) => measure.weights.iter().map(|w| w * c * c).collect(),
            _ => convolve_modes(&measure.weights, &z.weights(j, len), &fft),
        };
        let mult = kernel_multiplier(kernel, t - j as f64 * dt, multiplier, grid);
        total.add(dt * (0..len).map(|f| mult[f] * mult[f] * mu[f].max(0.0)).sum::<f64>());
    }
    Ok(total.value())
}

/// `‖Λ_n − Λ_ref‖_{0,Z}` for each mollifier in `schedule`; the reference is the unmollified
/// lattice kernel (band-limit at the grid cutoff) unless given.
pub fn mollifier_convergence(
    kernel: &Kernel,
    z: &ZSpectrum,
    measure: &DiscreteSpectralMeasure,
    schedule: &[Mollifier],
    reference: Option<&Mollifier>,
    step: usize,
    dt: f64,
) -> Result<Vec<f64>> {
    let grid = &measure.grid;
    let reference = mollifier_multipliers(reference, grid);
    schedule
        .iter()
        .map(|m| {
            let diff: Vec<f64> = mollifier_multipliers(Some(m), grid)
                .iter()
                .zip(&reference)
                .map(|(a, b)| a - b)
                .collect();
            Ok(zero_norm(kernel, &diff, z, measure, step, dt)?.sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MollifierFamily;
    use crate::measure::{discretize_measure, SpectralMeasureSpec};
    use crate::noise::sample_increments;

    fn setup(spec: SpectralMeasureSpec, d: usize, k: usize) -> DiscreteSpectralMeasure {
        discretize_measure(&spec, &TorusGrid::new(d, 1.0, k).unwrap()).unwrap()
    }

    #[test]
    fn zero_integrand_gives_zero() {
        let m = setup(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 2);
        let basis = ConsBasis::new(&m);
        let noise = sample_increments(&m, 8, 0.125, 1, 0).unwrap();
        let ctx = NoiseContext::new(&noise, &m, &basis).unwrap();
        let z = AdaptedIntegrand::constant(&m.grid, 9, 0.0);
        let target = Target { step: 8, point: 3 };
        assert_eq!(cd_integral(&Kernel::Wave, None, &z, &ctx, target).unwrap(), 0.0);
        assert_eq!(pathwise_integral(&Kernel::Wave, None, &z, 0.125, target).unwrap(), 0.0);
    }

    #[test]
    fn pathwise_of_one_is_half_t_squared() {
        let m = setup(SpectralMeasureSpec::DiracZero, 1, 2);
        let z = AdaptedIntegrand::constant(&m.grid, 17, 1.0);
        let v = pathwise_integral(&Kernel::Wave, None, &z, 1.0 / 16.0, Target { step: 16, point: 2 }).unwrap();
        assert!((v - 0.5).abs() < 1e-14, "{v}");
    }

    #[test]
    fn unchecked_integrand_is_rejected() {
        let m = setup(SpectralMeasureSpec::Lebesgue, 1, 2);
        let basis = ConsBasis::new(&m);
        let noise = sample_increments(&m, 4, 0.25, 1, 0).unwrap();
        let ctx = NoiseContext::new(&noise, &m, &basis).unwrap();
        let z = AdaptedIntegrand::unchecked(&m.grid, 5, vec![1.0; 25]).unwrap();
        assert!(matches!(
            cd_integral(&Kernel::Wave, None, &z, &ctx, Target { step: 4, point: 0 }),
            Err(Error::NotAdapted)
        ));
        let other = sample_increments(&m, 4, 0.25, 1, 1).unwrap();
        let ctx2 = NoiseContext::new(&other, &m, &basis).unwrap();
        let z = AdaptedIntegrand::from_causal(&ctx2, |_, _| vec![1.0; 5]).unwrap();
        assert!(cd_integral(&Kernel::Wave, None, &z, &ctx, Target { step: 4, point: 0 }).is_err());
    }

    #[test]
    fn three_constructions_agree_on_a_path() {
        let m = setup(SpectralMeasureSpec::Riesz { beta: 1.2 }, 2, 2);
        let basis = ConsBasis::new(&m);
        let steps = 6;
        let dt = 1.0 / steps as f64;
        let noise = sample_increments(&m, steps, dt, 4, 2).unwrap();
        let ctx = NoiseContext::new(&noise, &m, &basis).unwrap();
        let z = AdaptedIntegrand::from_causal(&ctx, |_, past| {
            (0..m.grid.len())
                .map(|x| 1.0 + (0..past.len()).map(|i| past.field(i)[x]).sum::<f64>().sin())
                .collect()
        })
        .unwrap();
        let moll = Mollifier::new(MollifierFamily::Gaussian, 2).unwrap();
        let target = Target { step: steps, point: 7 };
        let cd = cd_integral(&Kernel::Wave, Some(&moll), &z, &ctx, target).unwrap();
        let phi = target_integrand(&Kernel::Wave, Some(&moll), &z, dt, target).unwrap();
        let ito = ito_series_integral(&phi, &ctx).unwrap();
        let mut sk = 0.0;
        for j in 0..steps {
            for x in 0..m.grid.len() {
                let g = ElementaryProcess {
                    start: j,
                    end: j + 1,
                    set: vec![x],
                    x: Box::new(Constant(phi.row(j)[x])),
                };
                sk += skorohod_elementary(&g, &ctx).unwrap();
            }
        }
        assert!((cd - ito).abs() <= 1e-10 * cd.abs(), "{cd} {ito}");
        assert!((cd - sk).abs() <= 1e-10 * cd.abs(), "{cd} {sk}");
    }

    #[test]
    fn series_of_a_basis_window_is_the_brownian_increment() {
        let m = setup(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 2);
        let basis = ConsBasis::new(&m);
        let noise = sample_increments(&m, 8, 0.125, 9, 0).unwrap();
        let ctx = NoiseContext::new(&noise, &m, &basis).unwrap();
        let i = 5;
        let e = basis.values(i);
        let mut vals = vec![0.0; 9 * m.grid.len()];
        for j in 2..6 {
            vals[j * m.grid.len()..(j + 1) * m.grid.len()].copy_from_slice(&e);
        }
        let phi = AdaptedIntegrand::deterministic(&m.grid, 9, vals).unwrap();
        let v = ito_series_integral(&phi, &ctx).unwrap();
        let w: f64 = (2..6).map(|j| ctx.increments(j)[i]).sum();
        assert!((v - w).abs() < 1e-12);
    }

    #[test]
    fn anticipating_first_chaos_gives_second_chaos() {
        // X = F(g) with g the window itself: δ(Xg) = F(g)² − ‖g‖².
        let m = setup(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 2);
        let basis = ConsBasis::new(&m);
        let noise = sample_increments(&m, 4, 0.25, 2, 0).unwrap();
        let ctx = NoiseContext::new(&noise, &m, &basis).unwrap();
        let proto = ElementaryProcess {
            start: 1,
            end: 3,
            set: vec![0, 4, 9],
            x: Box::new(Constant(1.0)),
        };
        let g = proto.direction(&ctx);
        let f = proto.window_mass(&ctx);
        let el = ElementaryProcess {
            x: Box::new(FirstChaos(g.clone())),
            ..proto
        };
        let v = skorohod_elementary(&el, &ctx).unwrap();
        let expect = f * f - g.norm_sq(0.25);
        assert!((v - expect).abs() < 1e-12 * (1.0 + expect.abs()), "{v} {expect}");
    }

    #[test]
    fn band_limit_convergence_is_exactly_zero() {
        let m = setup(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 3);
        let sched: Vec<Mollifier> = [1, 2, 3, 4]
            .iter()
            .map(|&n| Mollifier::new(MollifierFamily::BandLimit, n).unwrap())
            .collect();
        let v = mollifier_convergence(&Kernel::Wave, &ZSpectrum::Constant(1.0), &m, &sched, None, 8, 0.125).unwrap();
        assert!(v[0] > 0.0);
        assert_eq!(v[2], 0.0);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn periodogram_of_constant_is_an_atom() {
        let m = setup(SpectralMeasureSpec::Lebesgue, 2, 1);
        let mut est = SpectrumEstimator::new(&m.grid, 2);
        for _ in 0..3 {
            est.add(&AdaptedIntegrand::constant(&m.grid, 2, 2.0)).unwrap();
        }
        match est.finish().unwrap() {
            ZSpectrum::Empirical { rows, clipped_mass, .. } => {
                assert!((rows[1][0] - 4.0).abs() < 1e-12);
                assert!(rows[1][1..].iter().all(|v| v.abs() < 1e-20));
                assert_eq!(clipped_mass, 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn constant_norm_matches_lattice_kernel_sum() {
        let m = setup(SpectralMeasureSpec::Riesz { beta: 1.5 }, 2, 2);
        let r = norm_0z(&Kernel::Wave, None, &ZSpectrum::Constant(1.5), &m, 8, 0.125).unwrap();
        let j = crate::kernels::j_delta(1.0, &Kernel::Wave, &m, None, crate::kernels::TimeRule::RightRiemann { steps: 8 }).unwrap();
        assert!((r.norm0_sq / (2.25 * j) - 1.0).abs() < 1e-12);
    }
}
