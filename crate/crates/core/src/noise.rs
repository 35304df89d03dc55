//! Driving noise on the torus: Hermitian mode increments, their realization as lattice
//! fields, the Cameron–Martin space `𝓗` and a real orthonormal basis of it.
//!
//! The field increment over step `j` is `ΔM_j(z) = Σ_k √w_k e^{2πi ξ_k·z} Δβ_k[j]`, where
//! `Δβ_{−k} = conj(Δβ_k)`. For paired modes the real and imaginary parts each have variance
//! `Δt/2`; the self-paired zero mode is real with variance `Δt`. With this normalization
//! `E[(Σ_z φ(z) ΔM_j(z) h^d)²] = Δt ‖φ‖²_𝓗`.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{require, Error, Result};
use crate::fft::LatticeFft;
use crate::grid::TorusGrid;
use crate::measure::DiscreteSpectralMeasure;

/// Identifies one noise path: the run seed and the replica number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub replica: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrements {
    pub grid: TorusGrid,
    pub steps: usize,
    pub dt: f64,
    pub key: NoiseKey,
    /// Shift counter: zero for a sampled path, bumped by every Cameron–Martin shift.
    pub generation: u64,
    /// `Δβ_k[j]` at `data[j * len + k]`.
    data: Vec<Complex64>,
}

/// Counter-based standard normal pairs keyed by `(seed, replica, mode, step)`.
///
/// The ChaCha stream is selected by the replica and the word position by `(mode, step)`, so
/// any single increment can be regenerated without replaying the others.
pub struct CounterNormals {
    rng: ChaCha12Rng,
    steps: usize,
}

impl CounterNormals {
    pub fn new(seed: u64, replica: u64, steps: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(replica);
        CounterNormals { rng, steps }
    }

    /// Positions the generator at `(mode, step)`; subsequent pairs follow in step order.
    pub fn seek(&mut self, mode: usize, step: usize) {
        self.rng.set_word_pos(4 * (mode as u128 * self.steps as u128 + step as u128));
    }

    pub fn next_pair(&mut self) -> (f64, f64) {
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = 1.0 - (self.rng.next_u64() >> 11) as f64 * scale;
        let u2 = (self.rng.next_u64() >> 11) as f64 * scale;
        let rad = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        (rad * c, rad * s)
    }
}

/// Samples `Δβ_k[j]` for every mode of the measure's grid and every step.
pub fn sample_increments(
    measure: &DiscreteSpectralMeasure,
    steps: usize,
    dt: f64,
    seed: u64,
    replica: u64,
) -> Result<NoiseIncrements> {
    require(steps >= 1, "N_t", "need at least one time step")?;
    require(dt.is_finite() && dt > 0.0, "dt", "time step must be positive")?;
    let grid = &measure.grid;
    let len = grid.len();
    let mut data = vec![Complex64::default(); steps * len];
    let mut gen = CounterNormals::new(seed, replica, steps);
    let half = (dt / 2.0).sqrt();
    let full = dt.sqrt();
    for f in 0..len {
        if !grid.is_canonical(f) {
            continue;
        }
        let g = grid.neg(f);
        gen.seek(f, 0);
        for j in 0..steps {
            let (z1, z2) = gen.next_pair();
            if g == f {
                data[j * len + f] = Complex64::new(z1 * full, 0.0);
            } else {
                let c = Complex64::new(z1 * half, z2 * half);
                data[j * len + f] = c;
                data[j * len + g] = c.conj();
            }
        }
    }
    Ok(NoiseIncrements {
        grid: grid.clone(),
        steps,
        dt,
        key: NoiseKey { seed, replica },
        generation: 0,
        data,
    })
}

impl NoiseIncrements {
    pub fn step(&self, j: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[j * len..(j + 1) * len]
    }

    /// Mutable access to one step. Both members of a pair must be updated together to keep
    /// the increments Hermitian.
    pub fn step_mut(&mut self, j: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        self.generation += 1;
        &mut self.data[j * len..(j + 1) * len]
    }

    pub fn raw(&self) -> &[Complex64] {
        &self.data
    }

    /// Spectrum of `ΔM_j` in unnormalized DFT convention: `DFT(ΔM_j)(k) = N √w_k Δβ_k[j]`.
    pub fn field_spectrum(&self, measure: &DiscreteSpectralMeasure, j: usize) -> Vec<Complex64> {
        let n = self.grid.len() as f64;
        self.step(j)
            .iter()
            .zip(&measure.weights)
            .map(|(b, w)| b * (w.sqrt() * n))
            .collect()
    }

    /// Noise driven by `ω + h`: `ΔW^i_j ↦ ΔW^i_j + Δt h_i(t_j)`.
    pub fn shifted(&self, basis: &ConsBasis, h: &HtVector) -> Result<NoiseIncrements> {
        require(h.steps == self.steps && h.basis_len == basis.len(), "h", "direction shape does not match")?;
        let mut out = self.clone();
        out.generation += 1;
        let len = self.grid.len();
        for j in 0..self.steps {
            let row = h.row(j);
            if row.iter().all(|&c| c == 0.0) {
                continue;
            }
            let amp = basis.mode_amplitudes(row);
            for (slot, a) in out.data[j * len..(j + 1) * len].iter_mut().zip(&amp) {
                *slot += a * self.dt;
            }
        }
        Ok(out)
    }

    /// Writes the increments as little-endian binary with a self-describing header.
    pub fn write_binary(&self, out: &mut impl Write, digest: &[u8; 32]) -> Result<()> {
        out.write_all(NOISE_MAGIC)?;
        write_header(out, &self.grid, self.steps, self.dt, self.key.seed, digest)?;
        out.write_all(&self.key.replica.to_le_bytes())?;
        for c in &self.data {
            out.write_all(&c.re.to_le_bytes())?;
            out.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(input: &mut impl Read) -> Result<(NoiseIncrements, [u8; 32])> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != NOISE_MAGIC {
            return Err(Error::Format("not a noise increment file".into()));
        }
        let h = read_header(input)?;
        let replica = read_u64(input)?;
        let len = h.grid.len();
        let mut data = Vec::with_capacity(h.steps * len);
        for _ in 0..h.steps * len {
            let re = read_f64(input)?;
            let im = read_f64(input)?;
            data.push(Complex64::new(re, im));
        }
        Ok((
            NoiseIncrements {
                grid: h.grid,
                steps: h.steps,
                dt: h.dt,
                key: NoiseKey { seed: h.seed, replica },
                generation: 0,
                data,
            },
            h.digest,
        ))
    }
}

const NOISE_MAGIC: &[u8; 8] = b"SWNOISE1";

pub(crate) struct Header {
    pub grid: TorusGrid,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub digest: [u8; 32],
}

/// Header fields: `d, L, K, N_t, Δt, seed`, then the 32-byte config digest.
pub(crate) fn write_header(
    out: &mut impl Write,
    grid: &TorusGrid,
    steps: usize,
    dt: f64,
    seed: u64,
    digest: &[u8; 32],
) -> Result<()> {
    out.write_all(&(grid.dim() as u64).to_le_bytes())?;
    out.write_all(&grid.side().to_le_bytes())?;
    out.write_all(&(grid.cutoff() as u64).to_le_bytes())?;
    out.write_all(&(steps as u64).to_le_bytes())?;
    out.write_all(&dt.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    out.write_all(digest)?;
    Ok(())
}

pub(crate) fn read_header(input: &mut impl Read) -> Result<Header> {
    let d = read_u64(input)? as usize;
    let side = read_f64(input)?;
    let cutoff = read_u64(input)? as usize;
    let steps = read_u64(input)? as usize;
    let dt = read_f64(input)?;
    let seed = read_u64(input)?;
    let mut digest = [0u8; 32];
    input.read_exact(&mut digest)?;
    Ok(Header {
        grid: TorusGrid::new(d, side, cutoff)?,
        steps,
        dt,
        seed,
        digest,
    })
}

pub(crate) fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated stream: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(input: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(input)?))
}

/// Complex realization of `ΔM_j` on the lattice. The imaginary part is rounding noise.
pub fn realize_field_increment_complex(
    incr: &NoiseIncrements,
    j: usize,
    measure: &DiscreteSpectralMeasure,
    fft: &LatticeFft,
) -> Result<Vec<Complex64>> {
    incr.grid.ensure_same(&measure.grid)?;
    require(j < incr.steps, "j", "step index out of range")?;
    let mut buf: Vec<Complex64> = incr
        .step(j)
        .iter()
        .zip(&measure.weights)
        .map(|(b, w)| b * w.sqrt())
        .collect();
    fft.inverse(&mut buf);
    Ok(buf)
}

/// Real lattice field `ΔM_j(z_m)`.
pub fn realize_field_increment(
    incr: &NoiseIncrements,
    j: usize,
    measure: &DiscreteSpectralMeasure,
    fft: &LatticeFft,
) -> Result<Vec<f64>> {
    Ok(realize_field_increment_complex(incr, j, measure, fft)?
        .iter()
        .map(|c| c.re)
        .collect())
}

/// `𝓕φ(ξ_k) ≈ h^d Σ_m e^{−2πi ξ_k·z_m} φ(z_m)` for a lattice function.
pub fn lattice_transform(phi: &[f64], grid: &TorusGrid, fft: &LatticeFft) -> Vec<Complex64> {
    let cell = grid.cell_volume();
    let mut out = fft.forward_real(phi);
    for c in &mut out {
        *c *= cell;
    }
    out
}

/// `⟨φ, ψ⟩_𝓗 = Re Σ_k w_k 𝓕φ(ξ_k) conj(𝓕ψ(ξ_k))`.
pub fn inner_h(phi: &[f64], psi: &[f64], measure: &DiscreteSpectralMeasure, fft: &LatticeFft) -> Result<f64> {
    let len = measure.grid.len();
    require(phi.len() == len && psi.len() == len, "phi", "lattice function has the wrong length")?;
    let a = lattice_transform(phi, &measure.grid, fft);
    let b = lattice_transform(psi, &measure.grid, fft);
    Ok(crate::stats::sum(
        a.iter()
            .zip(&b)
            .zip(&measure.weights)
            .map(|((x, y), w)| w * (x * y.conj()).re),
    ))
}

/// An element of the discrete `𝓗_T`: coefficients `c_i(t_j)` on the basis, one row per step.
/// Its norm is `Σ_{j,i} c_i(t_j)² Δt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HtVector {
    pub steps: usize,
    pub basis_len: usize,
    pub coeffs: Vec<f64>,
}

impl HtVector {
    pub fn zeros(steps: usize, basis_len: usize) -> Self {
        HtVector {
            steps,
            basis_len,
            coeffs: vec![0.0; steps * basis_len],
        }
    }

    /// `e_i 1_{[t_j, t_{j+1})}`.
    pub fn unit(steps: usize, basis_len: usize, j: usize, i: usize) -> Self {
        let mut h = Self::zeros(steps, basis_len);
        h.coeffs[j * basis_len + i] = 1.0;
        h
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.coeffs[j * self.basis_len..(j + 1) * self.basis_len]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.coeffs[j * self.basis_len..(j + 1) * self.basis_len]
    }

    pub fn dot(&self, other: &HtVector, dt: f64) -> f64 {
        crate::stats::sum(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b)) * dt
    }

    pub fn norm_sq(&self, dt: f64) -> f64 {
        self.dot(self, dt)
    }

    pub fn scaled(&self, s: f64) -> HtVector {
        HtVector {
            steps: self.steps,
            basis_len: self.basis_len,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BasisKind {
    Constant,
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisElement {
    /// Flat index of the canonical mode `k`.
    pub mode: usize,
    pub kind: BasisKind,
    pub weight: f64,
}

/// Real orthonormal basis of `𝓗` on the lattice: `cos(2πξ_k·z)` and `sin(2πξ_k·z)` for each
/// canonical mode with positive weight, plus the constant when `w_0 > 0`, scaled to unit norm.
#[derive(Debug, Clone, Serialize)]
pub struct ConsBasis {
    pub grid: TorusGrid,
    pub elements: Vec<BasisElement>,
}

impl ConsBasis {
    pub fn new(measure: &DiscreteSpectralMeasure) -> Self {
        let grid = &measure.grid;
        let mut elements = Vec::new();
        for f in 0..grid.len() {
            let w = measure.weights[f];
            if w <= 0.0 || !grid.is_canonical(f) {
                continue;
            }
            if grid.neg(f) == f {
                elements.push(BasisElement {
                    mode: f,
                    kind: BasisKind::Constant,
                    weight: w,
                });
            } else {
                for kind in [BasisKind::Cos, BasisKind::Sin] {
                    elements.push(BasisElement { mode: f, kind, weight: w });
                }
            }
        }
        ConsBasis {
            grid: grid.clone(),
            elements,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Lattice values of `e_i`.
    pub fn values(&self, i: usize) -> Vec<f64> {
        let g = &self.grid;
        let e = self.elements[i];
        let vol = g.side().powi(g.dim() as i32);
        let k = g.mode(e.mode);
        let n = g.per_axis() as f64;
        (0..g.len())
            .map(|m| {
                let phase: f64 = g
                    .point(m)
                    .iter()
                    .zip(&k)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>()
                    * 2.0
                    * std::f64::consts::PI
                    / n;
                match e.kind {
                    BasisKind::Constant => 1.0 / (e.weight.sqrt() * vol),
                    BasisKind::Cos => (2.0 / e.weight).sqrt() / vol * phase.cos(),
                    BasisKind::Sin => (2.0 / e.weight).sqrt() / vol * phase.sin(),
                }
            })
            .collect()
    }

    /// `⟨φ, e_i⟩_𝓗` for every basis element, from `𝓕φ` on the lattice.
    pub fn coefficients(&self, spectrum: &[Complex64]) -> Vec<f64> {
        self.elements
            .iter()
            .map(|e| {
                let c = spectrum[e.mode];
                match e.kind {
                    BasisKind::Constant => e.weight.sqrt() * c.re,
                    BasisKind::Cos => (2.0 * e.weight).sqrt() * c.re,
                    BasisKind::Sin => -(2.0 * e.weight).sqrt() * c.im,
                }
            })
            .collect()
    }

    /// Brownian increments `ΔW^i_j = ⟨e_i 1_{[t_j,t_{j+1})}, M⟩` of step `j`.
    pub fn increments(&self, noise: &NoiseIncrements, j: usize) -> Vec<f64> {
        let row = noise.step(j);
        self.elements
            .iter()
            .map(|e| {
                let b = row[e.mode];
                match e.kind {
                    BasisKind::Constant => b.re,
                    BasisKind::Cos => std::f64::consts::SQRT_2 * b.re,
                    BasisKind::Sin => -std::f64::consts::SQRT_2 * b.im,
                }
            })
            .collect()
    }

    /// All increments, `N_t × B`, row-major by step.
    pub fn all_increments(&self, noise: &NoiseIncrements) -> Vec<f64> {
        (0..noise.steps).flat_map(|j| self.increments(noise, j)).collect()
    }

    /// Mode amplitudes `a_k` with `Σ_k √w_k e^{2πiξ_k·z} a_k = Σ_i c_i (C e_i)(z)`, where `C`
    /// is the covariance operator. This is the inverse of [`ConsBasis::increments`].
    pub fn mode_amplitudes(&self, c: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.grid.len()];
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (e, &v) in self.elements.iter().zip(c) {
            let g = self.grid.neg(e.mode);
            match e.kind {
                BasisKind::Constant => out[e.mode].re += v,
                BasisKind::Cos => {
                    out[e.mode].re += v * r;
                    out[g].re += v * r;
                }
                BasisKind::Sin => {
                    out[e.mode].im -= v * r;
                    out[g].im += v * r;
                }
            }
        }
        out
    }

    /// Lattice field `Σ_i c_i (C e_i)(z)`: the noise-shaped image of an `𝓗` element. Pairing it
    /// with `φ` over the lattice gives `⟨φ, Σ c_i e_i⟩_𝓗`.
    pub fn shaped_field(&self, c: &[f64], measure: &DiscreteSpectralMeasure, fft: &LatticeFft) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .mode_amplitudes(c)
            .iter()
            .zip(&measure.weights)
            .map(|(a, w)| a * w.sqrt())
            .collect();
        fft.inverse(&mut buf);
        buf.iter().map(|z| z.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{discretize_measure, SpectralMeasureSpec};

    fn setup(spec: SpectralMeasureSpec, d: usize, side: f64, k: usize) -> (DiscreteSpectralMeasure, LatticeFft) {
        let grid = TorusGrid::new(d, side, k).unwrap();
        let fft = LatticeFft::new(&grid);
        (discretize_measure(&spec, &grid).unwrap(), fft)
    }

    #[test]
    fn increments_are_hermitian_and_reproducible() {
        let (mu, _) = setup(SpectralMeasureSpec::Riesz { beta: 1.0 }, 2, 1.0, 3);
        let a = sample_increments(&mu, 5, 0.01, 7, 2).unwrap();
        let b = sample_increments(&mu, 5, 0.01, 7, 2).unwrap();
        assert_eq!(a.raw(), b.raw());
        let c = sample_increments(&mu, 5, 0.01, 7, 3).unwrap();
        assert_ne!(a.raw(), c.raw());
        for j in 0..5 {
            let row = a.step(j);
            for f in 0..mu.grid.len() {
                assert_eq!(row[f], row[mu.grid.neg(f)].conj());
            }
            assert_eq!(row[0].im, 0.0);
        }
    }

    #[test]
    fn counter_access_is_position_independent() {
        let mut g = CounterNormals::new(11, 4, 10);
        g.seek(3, 7);
        let direct = g.next_pair();
        let mut h = CounterNormals::new(11, 4, 10);
        h.seek(3, 0);
        let mut walked = (0.0, 0.0);
        for _ in 0..8 {
            walked = h.next_pair();
        }
        assert_eq!(direct, walked);
    }

    #[test]
    fn realized_field_is_real() {
        let (mu, fft) = setup(SpectralMeasureSpec::Riesz { beta: 1.5 }, 3, 1.0, 2);
        let incr = sample_increments(&mu, 3, 0.1, 1, 0).unwrap();
        for j in 0..3 {
            let z = realize_field_increment_complex(&incr, j, &mu, &fft).unwrap();
            let scale = z.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
            assert!(z.iter().all(|c| c.im.abs() <= 1e-12 * scale.max(1.0)));
        }
    }

    #[test]
    fn dirac_noise_is_constant_in_space() {
        let (mu, fft) = setup(SpectralMeasureSpec::DiracZero, 2, 1.0, 2);
        let incr = sample_increments(&mu, 4, 0.25, 3, 0).unwrap();
        for j in 0..4 {
            let field = realize_field_increment(&incr, j, &mu, &fft).unwrap();
            let b0 = incr.step(j)[0].re;
            assert!(field.iter().all(|&v| (v - b0).abs() < 1e-14));
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let (mu, fft) = setup(SpectralMeasureSpec::Riesz { beta: 1.3 }, 2, 2.0, 2);
        let basis = ConsBasis::new(&mu);
        assert_eq!(basis.len(), mu.support().count());
        let vals: Vec<Vec<f64>> = (0..basis.len()).map(|i| basis.values(i)).collect();
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let ip = inner_h(&vals[i], &vals[j], &mu, &fft).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12, "({i},{j}) -> {ip}");
            }
        }
    }

    #[test]
    fn coefficients_match_inner_products() {
        let (mu, fft) = setup(SpectralMeasureSpec::Riesz { beta: 0.8 }, 2, 1.0, 2);
        let basis = ConsBasis::new(&mu);
        let phi: Vec<f64> = (0..mu.grid.len()).map(|m| ((m * m) as f64 * 0.3).sin()).collect();
        let coeffs = basis.coefficients(&lattice_transform(&phi, &mu.grid, &fft));
        for (i, c) in coeffs.iter().enumerate() {
            let ip = inner_h(&phi, &basis.values(i), &mu, &fft).unwrap();
            assert!((c - ip).abs() < 1e-12);
        }
    }

    #[test]
    fn shaped_field_pairs_to_inner_product() {
        let (mu, fft) = setup(SpectralMeasureSpec::Riesz { beta: 1.1 }, 2, 1.5, 2);
        let basis = ConsBasis::new(&mu);
        let c: Vec<f64> = (0..basis.len()).map(|i| (i as f64 * 0.7).cos()).collect();
        let shaped = basis.shaped_field(&c, &mu, &fft);
        let phi: Vec<f64> = (0..mu.grid.len()).map(|m| (m as f64 * 0.41).sin() + 0.2).collect();
        let pairing: f64 = phi.iter().zip(&shaped).map(|(a, b)| a * b).sum::<f64>() * mu.grid.cell_volume();
        let coeffs = basis.coefficients(&lattice_transform(&phi, &mu.grid, &fft));
        let direct: f64 = coeffs.iter().zip(&c).map(|(a, b)| a * b).sum();
        assert!((pairing - direct).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let (mu, _) = setup(SpectralMeasureSpec::Lebesgue, 1, 1.0, 3);
        let incr = sample_increments(&mu, 6, 0.5, 99, 1).unwrap();
        let mut buf = Vec::new();
        incr.write_binary(&mut buf, &[7u8; 32]).unwrap();
        let (back, digest) = NoiseIncrements::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(digest, [7u8; 32]);
        assert_eq!(back.raw(), incr.raw());
        assert_eq!(back.key, incr.key);
        assert!(NoiseIncrements::read_binary(&mut &buf[..buf.len() - 3]).is_err());
    }
}
