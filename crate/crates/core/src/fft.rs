//! Multidimensional DFT on the lattice, built from `rustfft` line transforms.
//!
//! `forward` computes `Σ_m f(m) e^{−2πi k·m/n}` and `inverse` computes
//! `Σ_k F(k) e^{+2πi k·m/n}`; neither is normalized.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::TorusGrid;

#[derive(Clone)]
pub struct LatticeFft {
    d: usize,
    n: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LatticeFft(d={}, n={})", self.d, self.n)
    }
}

impl LatticeFft {
    pub fn new(grid: &TorusGrid) -> Self {
        Self::with_shape(grid.dim(), grid.per_axis())
    }

    pub fn with_shape(d: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        LatticeFft {
            d,
            n,
            len: n.pow(d as u32),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len, "buffer does not match lattice size");
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::default(); n];
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            if stride == 1 {
                for chunk in data.chunks_exact_mut(n) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
                continue;
            }
            let block = stride * n;
            for outer in (0..self.len).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward_real(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Real part of the inverse transform divided by the lattice size.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Periodic convolution with the kernel whose transform is `multiplier`.
    pub fn convolve(&self, field: &[f64], multiplier: &[f64]) -> Vec<f64> {
        let mut buf = self.forward_real(field);
        for (c, &m) in buf.iter_mut().zip(multiplier) {
            *c *= m;
        }
        self.inverse_real(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(grid: &TorusGrid, f: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = grid.per_axis() as f64;
        (0..grid.len())
            .map(|k| {
                let kv = grid.point(k);
                (0..grid.len())
                    .map(|m| {
                        let mv = grid.point(m);
                        let phase: f64 = kv.iter().zip(&mv).map(|(&a, &b)| (a * b) as f64).sum();
                        f[m] * Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * phase / n)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_in_three_dimensions() {
        let grid = TorusGrid::new(3, 1.0, 1).unwrap();
        let plan = LatticeFft::new(&grid);
        let data: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        for (sign, fwd) in [(-1.0, true), (1.0, false)] {
            let mut got = data.clone();
            if fwd {
                plan.forward(&mut got);
            } else {
                plan.inverse(&mut got);
            }
            let want = naive_dft(&grid, &data, sign);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
