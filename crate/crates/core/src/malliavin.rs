//! Malliavin derivative of the solution and the nondegeneracy estimates built on it.
//!
//! The derivative in a direction `h ∈ 𝓗_T` solves the linearized recursion
//! `D_i = Σ_{j<i} G_n(t_i−t_j) ∗ (σ(u_j) Δt H_j + σ'(u_j) D_j ΔM_j + ω_j Δt b'(u_j) D_j)`,
//! where `H_j` is the noise-shaped field of `h_j`. The full derivative `Du(t,x)` is the
//! gradient of that linear map, obtained from one transposed sweep rather than one forward
//! solve per direction.

use serde::Serialize;

use crate::error::{require, Error, Result};
use crate::integrals::Target;
use crate::kernels::{j_delta, jbar_delta, Mollifier, TimeRule};
use crate::noise::{realize_field_increment, ConsBasis, HtVector, NoiseIncrements};
use crate::par;
use crate::solver::{
    drift_weight, shifted_from, solve_with, Coefficients, Forcing, ShiftVariant, SolutionField, SolverConfig, Stepper,
};
use crate::stats::{ls_slope, Estimate, StationarityAccumulator, StationarityReport};

/// `D^h u(t_i, z_m)` for one direction `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalDerivative {
    pub steps: usize,
    pub len: usize,
    frames: Vec<f64>,
}

impl DirectionalDerivative {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * self.len..(i + 1) * self.len]
    }

    pub fn at(&self, i: usize, m: usize) -> f64 {
        self.frames[i * self.len + m]
    }
}

fn check_path(cfg: &SolverConfig, noise: &NoiseIncrements, u: &SolutionField, basis: &ConsBasis) -> Result<()> {
    cfg.grid().ensure_same(&noise.grid)?;
    cfg.grid().ensure_same(&u.grid)?;
    require(u.steps == cfg.steps && noise.steps == cfg.steps, "N_t", "solution, noise and config disagree")?;
    require(u.key == noise.key, "u", "solution was computed on a different noise path")?;
    require(basis.grid.same_shape(cfg.grid()), "basis", "basis grid differs")
}

/// Forward solve of the derivative recursion in direction `h`.
pub fn solve_derivative_directional(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    u: &SolutionField,
    basis: &ConsBasis,
    h: &HtVector,
) -> Result<DirectionalDerivative> {
    check_path(cfg, noise, u, basis)?;
    require(h.steps == cfg.steps && h.basis_len == basis.len(), "h", "direction shape does not match")?;
    let stepper = Stepper::new(cfg);
    let len = cfg.grid().len();
    let feedback = !coeffs.sigma.is_constant() || !coeffs.drift.is_constant();
    let frames = stepper.run(cfg.steps, |j, d| {
        let row = h.row(j);
        let active = row.iter().any(|&c| c != 0.0);
        let uj = u.frame(j);
        let mut f = vec![0.0; len];
        let mut any = false;
        if active {
            let shaped = basis.shaped_field(row, &cfg.measure, &stepper.fft);
            for m in 0..len {
                f[m] = coeffs.sigma.value(uj[m]) * cfg.dt * shaped[m];
            }
            any = true;
        }
        if feedback && d.iter().any(|&v| v != 0.0) {
            let dm = realize_field_increment(noise, j, &cfg.measure, &stepper.fft)?;
            let w = drift_weight(j) * cfg.dt;
            for m in 0..len {
                f[m] += (coeffs.sigma.derivative(uj[m]) * dm[m] + w * coeffs.drift.derivative(uj[m])) * d[m];
            }
            any = true;
        }
        Ok(if any { Forcing::Physical(f) } else { Forcing::None })
    })?;
    Ok(DirectionalDerivative {
        steps: cfg.steps,
        len,
        frames,
    })
}

/// `Du(t,x)` as coefficients over (time step, basis element), with the part that has no
/// feedback through `σ'` and `b'`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalliavinField {
    pub target: Target,
    pub dt: f64,
    pub coeffs: HtVector,
    /// `σ(u_j) G_n(t − t_j, x − ·)` projected on the basis.
    pub leading: HtVector,
}

impl MalliavinField {
    /// `‖Du(t,x)‖²_{𝓗_T}`.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.norm_sq(self.dt)
    }

    /// `⟨Du(t,x), h⟩_{𝓗_T}`.
    pub fn directional(&self, h: &HtVector) -> f64 {
        self.coeffs.dot(h, self.dt)
    }

    fn window(&self, steps: usize) -> std::ops::Range<usize> {
        self.target.step.saturating_sub(steps)..self.target.step
    }

    /// Squared norm of the leading part over the last `steps` steps before the target.
    pub fn leading_window_sq(&self, steps: usize) -> f64 {
        self.window(steps)
            .map(|j| self.leading.row(j).iter().map(|c| c * c).sum::<f64>() * self.dt)
            .sum()
    }

    /// `I(t,x;δ)`: squared norm of the feedback remainder over the last `steps` steps.
    pub fn remainder(&self, steps: usize) -> f64 {
        self.window(steps)
            .map(|j| {
                self.coeffs
                    .row(j)
                    .iter()
                    .zip(self.leading.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    * self.dt
            })
            .sum()
    }
}

/// Gradient of `Σ_m seed_m D u(t_I, z_m)` by the transposed sweep; returns the full and the
/// leading coefficients.
#[allow(clippy::too_many_arguments)]
fn gradient(
    stepper: &Stepper,
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    u: &SolutionField,
    basis: &ConsBasis,
    step: usize,
    seed: &[f64],
    fields: &[Vec<f64>],
) -> Result<(HtVector, HtVector)> {
    let mut full = HtVector::zeros(cfg.steps, basis.len());
    let mut lead = HtVector::zeros(cfg.steps, basis.len());
    if step == 0 {
        return Ok((full, lead));
    }
    let len = cfg.grid().len();
    let project = |nu: &[f64], j: usize| -> Vec<f64> {
        let uj = u.frame(j);
        let prod: Vec<f64> = (0..len).map(|m| nu[m] * coeffs.sigma.value(uj[m])).collect();
        basis.coefficients(&stepper.fft.forward_real(&prod))
    };
    stepper.run_adjoint(step, seed, |j, nu| {
        lead.row_mut(j).copy_from_slice(&project(nu, j));
        Ok(None)
    })?;
    let feedback = !coeffs.sigma.is_constant() || !coeffs.drift.is_constant();
    if !feedback {
        full = lead.clone();
        return Ok((full, lead));
    }
    stepper.run_adjoint(step, seed, |j, nu| {
        full.row_mut(j).copy_from_slice(&project(nu, j));
        let uj = u.frame(j);
        let w = drift_weight(j) * cfg.dt;
        let dm = &fields[j];
        Ok(Some(
            (0..len)
                .map(|m| (coeffs.sigma.derivative(uj[m]) * dm[m] + w * coeffs.drift.derivative(uj[m])) * nu[m])
                .collect(),
        ))
    })?;
    Ok((full, lead))
}

/// Realized `ΔM_j` for every step.
pub fn noise_fields(cfg: &SolverConfig, noise: &NoiseIncrements, stepper: &Stepper) -> Result<Vec<Vec<f64>>> {
    (0..cfg.steps)
        .map(|j| realize_field_increment(noise, j, &cfg.measure, &stepper.fft))
        .collect()
}

/// Full derivative field at `target`.
pub fn solve_derivative_full(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    u: &SolutionField,
    basis: &ConsBasis,
    target: Target,
) -> Result<MalliavinField> {
    check_path(cfg, noise, u, basis)?;
    require(target.step <= cfg.steps && target.point < cfg.grid().len(), "target", "off the grid")?;
    let stepper = Stepper::new(cfg);
    let fields = noise_fields(cfg, noise, &stepper)?;
    let mut seed = vec![0.0; cfg.grid().len()];
    seed[target.point] = 1.0;
    let (coeffs_out, leading) = gradient(&stepper, cfg, coeffs, u, basis, target.step, &seed, &fields)?;
    Ok(MalliavinField {
        target,
        dt: cfg.dt,
        coeffs: coeffs_out,
        leading,
    })
}

/// Derivative of the lattice functional `Σ_m weights_m u(t_I, z_m)`.
pub fn solve_derivative_functional(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    u: &SolutionField,
    basis: &ConsBasis,
    step: usize,
    weights: &[f64],
) -> Result<HtVector> {
    check_path(cfg, noise, u, basis)?;
    require(weights.len() == cfg.grid().len(), "weights", "one weight per lattice point")?;
    let stepper = Stepper::new(cfg);
    let fields = noise_fields(cfg, noise, &stepper)?;
    Ok(gradient(&stepper, cfg, coeffs, u, basis, step, weights, &fields)?.0)
}

/// Derivative of the mollified solution `u_n`, solved on the same path.
pub fn solve_derivative_mollified(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    basis: &ConsBasis,
    mollifier: Mollifier,
    target: Target,
) -> Result<MalliavinField> {
    let c = cfg.with_mollifier(Some(mollifier));
    let stepper = Stepper::new(&c);
    let un = solve_with(&stepper, &c, coeffs, noise)?;
    solve_derivative_full(&c, coeffs, noise, &un, basis, target)
}

/// Geometric `ε ∈ {10^{-1}, 10^{-1.5}, …, 10^{-4}}`.
pub fn default_eps() -> Vec<f64> {
    (0..7).map(|k| 10f64.powf(-1.0 - 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub variant: ShiftVariant,
    pub target: Target,
    /// `⟨Du(t,x), h⟩_{𝓗_T}`.
    pub derivative: f64,
    pub eps: Vec<f64>,
    /// `|(u^{εh} − u)/ε − ⟨Du, h⟩|`.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log e` against `log ε` over every ε.
    pub slope_full: Option<f64>,
    /// Same over `ε ∈ [10^{-3}, 10^{-2}]`.
    pub slope_middle: Option<f64>,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

fn log_slope(eps: &[f64], errors: &[f64], keep: impl Fn(f64) -> bool) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(errors)
        .filter(|(e, err)| keep(**e) && **err > 0.0)
        .map(|(e, err)| (e.log10(), err.log10()))
        .unzip();
    (xs.len() >= 2).then(|| ls_slope(&xs, &ys))
}

/// Finite-difference check of the derivative against the shifted solution.
#[allow(clippy::too_many_arguments)]
pub fn fd_check(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    noise: &NoiseIncrements,
    basis: &ConsBasis,
    h: &HtVector,
    eps: &[f64],
    target: Target,
    variant: ShiftVariant,
) -> Result<FdReport> {
    require(!eps.is_empty() && eps.iter().all(|&e| e > 0.0), "eps", "need positive step sizes")?;
    let stepper = Stepper::new(cfg);
    let u = solve_with(&stepper, cfg, coeffs, noise)?;
    let d = solve_derivative_directional(cfg, coeffs, noise, &u, basis, h)?;
    let derivative = d.at(target.step, target.point);
    let base = u.at(target.step, target.point);
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let uh = shifted_from(&stepper, cfg, coeffs, noise, basis, &u, &h.scaled(e), variant)?;
        errors.push(((uh.at(target.step, target.point) - base) / e - derivative).abs());
    }
    Ok(FdReport {
        variant,
        target,
        derivative,
        slope_full: log_slope(eps, &errors, |_| true),
        slope_middle: log_slope(eps, &errors, |e| (0.99e-3..=1.01e-2).contains(&e)),
        eps: eps.to_vec(),
        errors,
    })
}

/// Unit-norm direction with seeded Gaussian coefficients on the steps before `step`.
pub fn random_direction(steps: usize, basis_len: usize, dt: f64, step: usize, seed: u64) -> HtVector {
    let mut normals = crate::noise::CounterNormals::new(seed, u64::MAX, steps);
    let mut h = HtVector::zeros(steps, basis_len);
    for j in 0..step.min(steps) {
        for i in 0..basis_len {
            normals.seek(i, j);
            h.row_mut(j)[i] = normals.next_pair().0;
        }
    }
    let n = h.norm_sq(dt).sqrt();
    if n > 0.0 {
        h.scaled(1.0 / n)
    } else {
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaLevel {
    pub delta: f64,
    pub window_steps: usize,
    /// `𝒥(δ)` for the configured mollifier.
    pub j_delta: f64,
    pub jbar_delta: f64,
    /// `Ê[I(t,x;δ)]`.
    pub remainder: Estimate,
    /// `Ê[I] / (𝒥(δ) 𝒥̄(δ))`.
    pub ratio: Estimate,
    /// `P̂[‖Du‖² < σ² 𝒥(δ)/3]`.
    pub below_third: Estimate,
    /// Replicas violating `‖Du‖² ≥ ½σ²𝒥(δ) − I`; must be zero.
    pub lower_bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegeneracyReport {
    pub target: Target,
    pub t: f64,
    pub sigma: f64,
    pub replicas: usize,
    pub norm_sq: Estimate,
    /// `Ê[‖Du‖⁴]`, reported without any integrability claim.
    pub norm_fourth: Estimate,
    pub levels: Vec<DeltaLevel>,
}

impl NondegeneracyReport {
    /// No increase of the ratio beyond 3 combined SE as δ shrinks.
    pub fn ratio_bounded(&self) -> bool {
        self.levels.windows(2).all(|w| {
            let (a, b) = (&w[0].ratio, &w[1].ratio);
            b.mean - a.mean <= 3.0 * (a.se * a.se + b.se * b.se).sqrt()
        })
    }

    /// Non-increasing within 3 SE, ending at a value indistinguishable from 0.
    pub fn probability_vanishes(&self) -> bool {
        let monotone = self.levels.windows(2).all(|w| {
            let (a, b) = (&w[0].below_third, &w[1].below_third);
            b.mean - a.mean <= 3.0 * (a.se * a.se + b.se * b.se).sqrt()
        });
        let last = self.levels.last().map(|l| l.below_third);
        monotone && last.is_some_and(|p| p.mean <= 3.0 * p.se)
    }
}

/// Steps spanned by a window of length `delta`.
pub fn window_steps(delta: f64, dt: f64) -> Result<usize> {
    let s = delta / dt;
    require(
        s >= 1.0 - 1e-9 && (s - s.round()).abs() < 1e-9,
        "delta",
        "window must be a positive multiple of the time step",
    )?;
    Ok(s.round() as usize)
}

/// Derivative-norm decomposition over the δ schedule.
pub fn nondegeneracy(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    target: Target,
    deltas: &[f64],
    workers: usize,
) -> Result<NondegeneracyReport> {
    if !coeffs.sigma.is_constant() {
        return Err(Error::Regime("nondegeneracy needs a constant σ".into()));
    }
    require(target.step > 0 && target.step <= cfg.steps, "t", "target time must be positive and on the grid")?;
    require(replicas >= 2, "replicas", "need at least two replicas")?;
    let t = target.step as f64 * cfg.dt;
    let sigma = coeffs.sigma.value(0.0);
    let mut windows = Vec::new();
    for &delta in deltas {
        require(delta <= t + 1e-12, "delta", "window longer than the target time")?;
        windows.push(window_steps(delta, cfg.dt)?);
    }
    let basis = ConsBasis::new(&cfg.measure);
    let stepper = Stepper::new(cfg);
    // One row per replica: ‖Du‖², then I for each window.
    let rows: Vec<Result<Vec<f64>>> = par::map_replicas(replicas, workers, |r| {
        let noise = cfg.sample(seed, r as u64)?;
        let u = solve_with(&stepper, cfg, coeffs, &noise)?;
        let fields = noise_fields(cfg, &noise, &stepper)?;
        let mut e = vec![0.0; cfg.grid().len()];
        e[target.point] = 1.0;
        let (full, leading) = gradient(&stepper, cfg, coeffs, &u, &basis, target.step, &e, &fields)?;
        let field = MalliavinField {
            target,
            dt: cfg.dt,
            coeffs: full,
            leading,
        };
        let mut row = vec![field.norm_sq()];
        row.extend(windows.iter().map(|&s| field.remainder(s)));
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let norms: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut levels = Vec::new();
    for (k, (&delta, &s)) in deltas.iter().zip(&windows).enumerate() {
        let rule = TimeRule::RightRiemann { steps: s };
        let jd = j_delta(s as f64 * cfg.dt, &cfg.kernel, &cfg.measure, cfg.mollifier.as_ref(), rule)?;
        let jb = jbar_delta(s as f64 * cfg.dt, &cfg.kernel, rule)?;
        let rem: Vec<f64> = rows.iter().map(|r| r[k + 1]).collect();
        let below: Vec<f64> = norms
            .iter()
            .map(|&n| if n < sigma * sigma * jd / 3.0 { 1.0 } else { 0.0 })
            .collect();
        let violations = norms
            .iter()
            .zip(&rem)
            .filter(|(&n, &i)| n < 0.5 * sigma * sigma * jd - i - 1e-12 * (1.0 + n.abs()))
            .count();
        let ratio: Vec<f64> = rem.iter().map(|i| i / (jd * jb)).collect();
        levels.push(DeltaLevel {
            delta,
            window_steps: s,
            j_delta: jd,
            jbar_delta: jb,
            remainder: Estimate::of(&rem),
            ratio: Estimate::of(&ratio),
            below_third: Estimate::of(&below),
            lower_bound_violations: violations,
        });
    }
    let fourth: Vec<f64> = norms.iter().map(|n| n * n).collect();
    Ok(NondegeneracyReport {
        target,
        t,
        sigma,
        replicas,
        norm_sq: Estimate::of(&norms),
        norm_fourth: Estimate::of(&fourth),
        levels,
    })
}

/// `‖Du(t,x)‖²` for every replica, in replica order.
pub fn derivative_norms(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    target: Target,
    workers: usize,
) -> Result<Vec<f64>> {
    let basis = ConsBasis::new(&cfg.measure);
    let stepper = Stepper::new(cfg);
    par::map_replicas(replicas, workers, |r| -> Result<f64> {
        let noise = cfg.sample(seed, r as u64)?;
        let u = solve_with(&stepper, cfg, coeffs, &noise)?;
        let fields = noise_fields(cfg, &noise, &stepper)?;
        let mut e = vec![0.0; cfg.grid().len()];
        e[target.point] = 1.0;
        let (full, _) = gradient(&stepper, cfg, coeffs, &u, &basis, target.step, &e, &fields)?;
        Ok(full.norm_sq(cfg.dt))
    })
    .into_iter()
    .collect()
}

/// `Ê[‖Du_n(t,x)‖²]` for the unmollified solution and each mollifier level.
pub fn derivative_moment_report(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    target: Target,
    schedule: &[Mollifier],
    workers: usize,
) -> Result<Vec<(Option<Mollifier>, Estimate)>> {
    std::iter::once(None)
        .chain(schedule.iter().copied().map(Some))
        .map(|m| {
            let norms = derivative_norms(&cfg.with_mollifier(m), coeffs, seed, replicas, target, workers)?;
            Ok((m, Estimate::of(&norms)))
        })
        .collect()
}

/// Groups of basis indices sharing a mode (the cosine and sine of one frequency, or the
/// constant).
pub fn mode_groups(basis: &ConsBasis) -> Vec<Vec<usize>> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, e) in basis.elements.iter().enumerate() {
        match groups.iter_mut().find(|(m, _)| *m == e.mode) {
            Some((_, g)) => g.push(i),
            None => groups.push((e.mode, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// `x`-independence of `E⟨D B(u(t,x)), D B(u(t,x+y))⟩` restricted to each frequency, over
/// every lattice shift `y`.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_check_dbu(
    cfg: &SolverConfig,
    coeffs: &Coefficients,
    seed: u64,
    replicas: usize,
    step: usize,
    b_prime: fn(f64) -> f64,
    family_alpha: f64,
    workers: usize,
) -> Result<StationarityReport> {
    let basis = ConsBasis::new(&cfg.measure);
    let groups = mode_groups(&basis);
    let grid = cfg.grid().clone();
    let len = grid.len();
    let shifts: Vec<usize> = (0..len).collect();
    let stepper = Stepper::new(cfg);
    let chunks = par::map_chunks(replicas, workers, |range| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for r in range {
            let noise = cfg.sample(seed, r as u64)?;
            let u = solve_with(&stepper, cfg, coeffs, &noise)?;
            let fields = noise_fields(cfg, &noise, &stepper)?;
            // Per point and group: the time-summed coefficient vectors of D B(u(t,x)).
            let mut grads = Vec::with_capacity(len);
            for x in 0..len {
                let mut e = vec![0.0; len];
                e[x] = b_prime(u.at(step, x));
                grads.push(gradient(&stepper, cfg, coeffs, &u, &basis, step, &e, &fields)?.0);
            }
            // products[(g * len + a) * len + b] = Σ_j Δt Σ_{i∈g} c_ji(a) c_ji(b)
            let mut products = vec![0.0; groups.len() * len * len];
            for (gi, g) in groups.iter().enumerate() {
                for a in 0..len {
                    for b in a..len {
                        let mut s = 0.0;
                        for j in 0..step {
                            for &i in g {
                                s += grads[a].row(j)[i] * grads[b].row(j)[i];
                            }
                        }
                        s *= cfg.dt;
                        products[(gi * len + a) * len + b] = s;
                        products[(gi * len + b) * len + a] = s;
                    }
                }
            }
            out.push(products);
        }
        Ok(out)
    });
    let mut acc = StationarityAccumulator::new(&grid, groups.len(), &shifts);
    for c in chunks {
        for p in c? {
            acc.add(|g, a, b| p[(g * len + a) * len + b]);
        }
    }
    Ok(acc.finish(family_alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;
    use crate::measure::{discretize_measure, SpectralMeasureSpec};
    use crate::solver::{solve_mild, Coefficient};
    use crate::grid::TorusGrid;

    fn config(d: usize, k: usize, steps: usize) -> SolverConfig {
        let grid = TorusGrid::new(d, 1.0, k).unwrap();
        let m = discretize_measure(&SpectralMeasureSpec::Riesz { beta: 1.0 }, &grid).unwrap();
        SolverConfig::new(m, steps, 1.0).unwrap()
    }

    #[test]
    fn adjoint_matches_forward_directional_solves() {
        let cfg = config(2, 1, 6);
        let coeffs = Coefficients::new(Coefficient::Sin { amplitude: 0.5, offset: 1.0 }, Coefficient::sin());
        let noise = cfg.sample(3, 0).unwrap();
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let target = Target { step: 6, point: 4 };
        let field = solve_derivative_full(&cfg, &coeffs, &noise, &u, &basis, target).unwrap();
        for j in 0..cfg.steps {
            for i in 0..basis.len() {
                let h = HtVector::unit(cfg.steps, basis.len(), j, i);
                let d = solve_derivative_directional(&cfg, &coeffs, &noise, &u, &basis, &h).unwrap();
                let expect = d.at(target.step, target.point) / cfg.dt;
                let got = field.coeffs.row(j)[i];
                assert!((got - expect).abs() < 1e-11 * (1.0 + expect.abs()), "j={j} i={i}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn coefficients_vanish_at_and_after_the_target() {
        let cfg = config(2, 1, 8);
        let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::sin());
        let noise = cfg.sample(1, 1).unwrap();
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let f = solve_derivative_full(&cfg, &coeffs, &noise, &u, &basis, Target { step: 5, point: 0 }).unwrap();
        for j in 5..8 {
            assert!(f.coeffs.row(j).iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn additive_norm_is_the_kernel_budget() {
        let cfg = config(2, 2, 16);
        let coeffs = Coefficients::new(Coefficient::Const { value: 1.7 }, Coefficient::Zero);
        let noise = cfg.sample(1, 0).unwrap();
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let f = solve_derivative_full(&cfg, &coeffs, &noise, &u, &basis, Target { step: 16, point: 3 }).unwrap();
        let j = j_delta(1.0, &Kernel::Wave, &cfg.measure, None, TimeRule::RightRiemann { steps: 16 }).unwrap();
        assert!((f.norm_sq() / (1.7 * 1.7 * j) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn linear_drift_matches_a_dense_volterra_solve() {
        // σ const, b(v) = λv: per mode the derivative solves a scalar lower-triangular system.
        let cfg = config(2, 1, 12);
        let lambda = 0.8;
        let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Linear { slope: lambda });
        let noise = cfg.sample(7, 0).unwrap();
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let h = random_direction(cfg.steps, basis.len(), cfg.dt, cfg.steps, 11);
        let d = solve_derivative_directional(&cfg, &coeffs, &noise, &u, &basis, &h).unwrap();
        let fft = crate::fft::LatticeFft::new(cfg.grid());
        let len = cfg.grid().len();
        let src: Vec<Vec<num_complex::Complex64>> = (0..cfg.steps)
            .map(|j| {
                let s: Vec<f64> = basis.shaped_field(h.row(j), &cfg.measure, &fft).iter().map(|v| v * cfg.dt).collect();
                fft.forward_real(&s)
            })
            .collect();
        for f in 0..len {
            let r = cfg.grid().xi_norm(f);
            let mut y = vec![num_complex::Complex64::default(); cfg.steps + 1];
            for i in 1..=cfg.steps {
                for j in 0..i {
                    let g = crate::kernels::wave_ft((i - j) as f64 * cfg.dt, r);
                    let term = g * (src[j][f] + y[j] * (drift_weight(j) * cfg.dt * lambda));
                    y[i] += term;
                }
            }
            let got = fft.forward_real(d.frame(cfg.steps))[f];
            assert!((got - y[cfg.steps]).norm() < 1e-10 * (1.0 + y[cfg.steps].norm()));
        }
    }

    #[test]
    fn additive_fd_error_is_rounding() {
        let cfg = config(2, 2, 8);
        let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Zero);
        let noise = cfg.sample(2, 0).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let h = random_direction(cfg.steps, basis.len(), cfg.dt, cfg.steps, 5);
        let target = Target { step: 8, point: 1 };
        for v in [ShiftVariant::Verbatim, ShiftVariant::AllTerms] {
            let r = fd_check(&cfg, &coeffs, &noise, &basis, &h, &default_eps(), target, v).unwrap();
            assert!(r.max_error() < 1e-9, "{:?}", r.errors);
        }
    }

    #[test]
    fn chain_rule_matches_seeded_sweep() {
        let cfg = config(2, 1, 6);
        let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::sin());
        let noise = cfg.sample(9, 2).unwrap();
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let target = Target { step: 6, point: 2 };
        let du = solve_derivative_full(&cfg, &coeffs, &noise, &u, &basis, target).unwrap();
        let bp = u.at(6, 2).cos();
        let mut w = vec![0.0; cfg.grid().len()];
        w[2] = bp;
        let dbu = solve_derivative_functional(&cfg, &coeffs, &noise, &u, &basis, 6, &w).unwrap();
        for (a, b) in dbu.coeffs.iter().zip(&du.coeffs.coeffs) {
            assert!((a - bp * b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}
