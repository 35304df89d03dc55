//! Periodic lattice on the torus `[0, L)^d` and its dual mode set.
//!
//! Modes are `ξ_k = k / L` with `k ∈ {−K..K}^d`; spatial points are `z_m = m L / (2K+1)`.
//! Both live on arrays of `n = 2K+1` entries per axis, stored row-major (axis 0 slowest).
//! A mode `k` sits at array position `k mod n`, which is the order a DFT expects.

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Default cap on the number of lattice points.
pub const DEFAULT_POINT_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusGrid {
    d: usize,
    side: f64,
    cutoff: usize,
    n: usize,
    len: usize,
    #[serde(skip)]
    cache: ModeCache,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ModeCache {
    norms: Vec<f64>,
    neg: Vec<usize>,
}

impl TorusGrid {
    pub fn new(d: usize, side: f64, cutoff: usize) -> Result<Self> {
        Self::with_budget(d, side, cutoff, DEFAULT_POINT_BUDGET)
    }

    pub fn with_budget(d: usize, side: f64, cutoff: usize, budget: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(invalid("L", format!("side length must be positive, got {side}")));
        }
        let n = 2 * cutoff + 1;
        let points = (n as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
        if points > budget as u128 {
            return Err(Error::MemoryBudget { points, budget });
        }
        let mut grid = TorusGrid {
            d,
            side,
            cutoff,
            n,
            len: points as usize,
            cache: ModeCache::default(),
        };
        grid.fill_cache();
        Ok(grid)
    }

    fn fill_cache(&mut self) {
        let mut norms = Vec::with_capacity(self.len);
        let mut neg = Vec::with_capacity(self.len);
        let mut k = vec![0i64; self.d];
        for f in 0..self.len {
            self.mode_into(f, &mut k);
            let sq: f64 = k.iter().map(|&c| (c as f64 / self.side).powi(2)).sum();
            norms.push(sq.sqrt());
            let negk: Vec<i64> = k.iter().map(|&c| -c).collect();
            neg.push(self.mode_index(&negk));
        }
        self.cache = ModeCache { norms, neg };
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Torus side length `L`.
    pub fn side(&self) -> f64 {
        self.side
    }

    /// Mode cutoff `K`.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Points per axis, `2K+1`.
    pub fn per_axis(&self) -> usize {
        self.n
    }

    /// Total number of lattice points, equal to the number of modes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Spacing `L / (2K+1)` between neighbouring lattice points.
    pub fn spacing(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Integer mode vector stored at flat position `f`.
    pub fn mode(&self, f: usize) -> Vec<i64> {
        let mut k = vec![0; self.d];
        self.mode_into(f, &mut k);
        k
    }

    pub fn mode_into(&self, f: usize, k: &mut [i64]) {
        let mut rest = f;
        for a in (0..self.d).rev() {
            let i = rest % self.n;
            rest /= self.n;
            k[a] = if i <= self.cutoff { i as i64 } else { i as i64 - self.n as i64 };
        }
    }

    /// Flat position of an integer mode vector (wrapped modulo `2K+1`).
    pub fn mode_index(&self, k: &[i64]) -> usize {
        let n = self.n as i64;
        k.iter().fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    /// Frequency vector `ξ_k = k / L`.
    pub fn xi(&self, f: usize) -> Vec<f64> {
        self.mode(f).iter().map(|&c| c as f64 / self.side).collect()
    }

    /// `|ξ_k|` for every mode, in flat order.
    pub fn xi_norms(&self) -> &[f64] {
        &self.cache.norms
    }

    pub fn xi_norm(&self, f: usize) -> f64 {
        self.cache.norms[f]
    }

    /// Flat position of `−k`.
    pub fn neg(&self, f: usize) -> usize {
        self.cache.neg[f]
    }

    /// True for exactly one member of each `{k, −k}` pair: the one whose first
    /// nonzero coordinate is positive. The zero mode is its own representative.
    pub fn is_canonical(&self, f: usize) -> bool {
        let k = self.mode(f);
        match k.iter().find(|&&c| c != 0) {
            Some(&c) => c > 0,
            None => true,
        }
    }

    /// Multi-index `m` of lattice point `f`.
    pub fn point(&self, f: usize) -> Vec<usize> {
        let mut m = vec![0; self.d];
        let mut rest = f;
        for a in (0..self.d).rev() {
            m[a] = rest % self.n;
            rest /= self.n;
        }
        m
    }

    pub fn point_index(&self, m: &[usize]) -> usize {
        m.iter().fold(0usize, |acc, &c| acc * self.n + c % self.n)
    }

    /// Coordinates `z_m` of lattice point `f`.
    pub fn position(&self, f: usize) -> Vec<f64> {
        let h = self.spacing();
        self.point(f).iter().map(|&c| c as f64 * h).collect()
    }

    /// Flat index of `z_f + z_s` on the torus.
    pub fn translate(&self, f: usize, s: usize) -> usize {
        let a = self.point(f);
        let b = self.point(s);
        let sum: Vec<usize> = a.iter().zip(&b).map(|(x, y)| (x + y) % self.n).collect();
        self.point_index(&sum)
    }

    pub fn same_shape(&self, other: &TorusGrid) -> bool {
        self.d == other.d && self.side == other.side && self.cutoff == other.cutoff
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(d={}, L={}, K={}) vs (d={}, L={}, K={})",
                self.d, self.side, self.cutoff, other.d, other.side, other.cutoff
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trip_and_pairing() {
        let g = TorusGrid::new(3, 2.0, 2).unwrap();
        assert_eq!(g.len(), 125);
        let mut self_paired = 0;
        for f in 0..g.len() {
            let k = g.mode(f);
            assert_eq!(g.mode_index(&k), f);
            assert_eq!(g.neg(g.neg(f)), f);
            if g.neg(f) == f {
                self_paired += 1;
                assert!(k.iter().all(|&c| c == 0));
            }
            assert!(g.is_canonical(f) ^ g.is_canonical(g.neg(f)) || g.neg(f) == f);
        }
        assert_eq!(self_paired, 1);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TorusGrid::new(0, 1.0, 2).is_err());
        assert!(TorusGrid::new(2, -1.0, 2).is_err());
        assert!(matches!(
            TorusGrid::with_budget(3, 1.0, 10, 1000),
            Err(Error::MemoryBudget { .. })
        ));
    }

    #[test]
    fn frequencies_scale_with_side() {
        let g = TorusGrid::new(2, 4.0, 3).unwrap();
        let f = g.mode_index(&[1, -2]);
        assert_eq!(g.xi(f), vec![0.25, -0.5]);
        assert!((g.xi_norm(f) - (0.25f64.powi(2) + 0.25).sqrt()).abs() < 1e-15);
    }
}
