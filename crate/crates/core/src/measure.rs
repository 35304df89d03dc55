//! Spectral measures: continuous specifications and their lattice discretization.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};
use crate::grid::TorusGrid;
use crate::quad::Panels;

/// A spectral measure `μ` on `ℝ^d`, given by a radial density or an atom at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpectralMeasureSpec {
    /// `μ(dξ) = c(d,β) |ξ|^{β−d} dξ`, the transform of the Riesz kernel `|x|^{−β}`.
    Riesz { beta: f64 },
    /// Lebesgue measure (space-time white noise).
    Lebesgue,
    /// Unit atom at the origin (noise constant in space).
    DiracZero,
    /// Density tabulated at increasing radii, linearly interpolated and zero beyond the last radius.
    Table {
        radii: Vec<f64>,
        density: Vec<f64>,
        #[serde(default)]
        radial: bool,
    },
}

impl SpectralMeasureSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            SpectralMeasureSpec::Riesz { beta } => {
                if !(*beta > 0.0 && *beta < d as f64) {
                    return Err(invalid("beta", format!("Riesz exponent must lie in (0, d={d}), got {beta}")));
                }
            }
            SpectralMeasureSpec::Table { radii, density, radial } => {
                if !radial {
                    return Err(invalid("radial", "table measures must be declared radial"));
                }
                if radii.is_empty() || radii.len() != density.len() {
                    return Err(invalid("radii", "radii and density must be nonempty and of equal length"));
                }
                if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] < 0.0 {
                    return Err(invalid("radii", "radii must be nonnegative and strictly increasing"));
                }
                if density.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(invalid("density", "density must be finite and nonnegative"));
                }
            }
            SpectralMeasureSpec::Lebesgue | SpectralMeasureSpec::DiracZero => {}
        }
        Ok(())
    }

    /// Radial density `ρ(r)` with `μ(dξ) = ρ(|ξ|) dξ`; `None` for the atom.
    pub fn density(&self, d: usize, r: f64) -> Option<f64> {
        match self {
            SpectralMeasureSpec::Riesz { beta } => Some(riesz_constant(d, *beta) * r.powf(beta - d as f64)),
            SpectralMeasureSpec::Lebesgue => Some(1.0),
            SpectralMeasureSpec::DiracZero => None,
            SpectralMeasureSpec::Table { radii, density, .. } => Some(interp_table(radii, density, r)),
        }
    }
}

fn interp_table(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v < x).max(1);
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// `c(d,β) = π^{β−d/2} Γ((d−β)/2) / Γ(β/2)`, so that `|x|^{−β}` has transform `c |ξ|^{β−d}`.
pub fn riesz_constant(d: usize, beta: f64) -> f64 {
    let d = d as f64;
    std::f64::consts::PI.powf(beta - d / 2.0) * gamma((d - beta) / 2.0) / gamma(beta / 2.0)
}

/// Surface area of the unit sphere in `ℝ^d`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// `∫_{[−a,a]^d} |ξ|^{β−d} dξ`.
///
/// Uses `|ξ|^{−p} = Γ(p/2)^{−1} ∫_0^∞ τ^{p/2−1} e^{−τ|ξ|²} dτ`, which turns the cube integral
/// into a one-dimensional integral of `(√(π/τ) erf(a√τ))^d`.
pub fn riesz_cube_integral(d: usize, beta: f64, a: f64) -> f64 {
    let p = d as f64 - beta;
    let panels = Panels::new(16);
    let dd = d as i32;
    // τ = e^x. Below τ_lo the erf factor equals 2a√(τ/π) to 1e−12 and above τ_hi it equals 1
    // in double precision, so both tails are closed-form.
    let lo = (1e-12 / (a * a)).ln();
    let hi = (64.0 / (a * a)).ln();
    let f = |x: f64| {
        let tau = x.exp();
        let line = (std::f64::consts::PI / tau).sqrt() * erf(a * tau.sqrt());
        tau.powf(p / 2.0) * line.powi(dd)
    };
    let n = ((hi - lo) / 0.1).ceil() as usize;
    let middle = panels.integrate(lo, hi, n, f);
    let left = (2.0 * a).powi(dd) * (2.0 / p) * (p * lo / 2.0).exp();
    let right = std::f64::consts::PI.powf(d as f64 / 2.0) * (2.0 / beta) * (-beta * hi / 2.0).exp();
    (left + middle + right) / gamma(p / 2.0)
}

/// A spectral measure restricted to the lattice modes of a torus grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteSpectralMeasure {
    pub grid: TorusGrid,
    /// Weight `w_k` of each mode, in the grid's flat order.
    pub weights: Vec<f64>,
}

impl DiscreteSpectralMeasure {
    pub fn weight(&self, f: usize) -> f64 {
        self.weights[f]
    }

    pub fn total_mass(&self) -> f64 {
        crate::stats::sum(self.weights.iter().copied())
    }

    /// Modes carrying positive weight.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(f, _)| f)
    }
}

/// `w_k = ρ(ξ_k) L^{−d}` away from the origin; the origin cell is integrated exactly for Riesz.
pub fn discretize_measure(spec: &SpectralMeasureSpec, grid: &TorusGrid) -> Result<DiscreteSpectralMeasure> {
    let d = grid.dim();
    spec.validate(d)?;
    let cell = grid.side().powi(-(d as i32));
    let mut weights = vec![0.0; grid.len()];
    match spec {
        SpectralMeasureSpec::DiracZero => weights[0] = 1.0,
        SpectralMeasureSpec::Lebesgue => weights.fill(cell),
        SpectralMeasureSpec::Riesz { beta } => {
            for (f, w) in weights.iter_mut().enumerate().skip(1) {
                *w = spec.density(d, grid.xi_norm(f)).unwrap() * cell;
            }
            let a = 0.5 / grid.side();
            weights[0] = riesz_constant(d, *beta) * riesz_cube_integral(d, *beta, a);
        }
        SpectralMeasureSpec::Table { .. } => {
            for (f, w) in weights.iter_mut().enumerate() {
                *w = spec.density(d, grid.xi_norm(f)).unwrap() * cell;
            }
        }
    }
    Ok(DiscreteSpectralMeasure {
        grid: grid.clone(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riesz_constant_matches_gaussian_identity() {
        // ∫ e^{−π|x|²}|x|^{−β} dx = ∫ e^{−π|ξ|²} c |ξ|^{β−d} dξ, both radial Gamma integrals.
        for (d, beta) in [(1, 0.5), (2, 1.0), (3, 1.5), (4, 1.5), (5, 2.5)] {
            let radial = |p: f64| {
                let s = (p + d as f64) / 2.0;
                sphere_area(d) * gamma(s) / (2.0 * std::f64::consts::PI.powf(s))
            };
            let lhs = radial(-beta);
            let rhs = riesz_constant(d, beta) * radial(beta - d as f64);
            assert!((lhs / rhs - 1.0).abs() < 1e-12, "d={d} beta={beta}");
        }
    }

    #[test]
    fn cube_integral_near_constant_density() {
        // As β → d the density tends to 1 and the integral to the cube volume.
        let v = riesz_cube_integral(2, 1.999999, 0.5);
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }

    #[test]
    fn cube_integral_matches_tensor_quadrature_in_two_dimensions() {
        // Polar form: ∫_cube |ξ|^{β−2} = (1/β) ∫ ρ(θ)^β dθ with ρ(θ) = a / max(|cos θ|, |sin θ|).
        let (beta, a) = (0.7, 0.5);
        let panels = Panels::new(16);
        let polar = 8.0 * panels.integrate(0.0, std::f64::consts::FRAC_PI_4, 64, |th| {
            (a / th.cos()).powf(beta) / beta
        });
        let v = riesz_cube_integral(2, beta, a);
        assert!((v / polar - 1.0).abs() < 1e-10, "{v} vs {polar}");
    }

    #[test]
    fn table_requires_radial_flag() {
        let spec = SpectralMeasureSpec::Table {
            radii: vec![0.0, 1.0],
            density: vec![1.0, 1.0],
            radial: false,
        };
        assert!(spec.validate(2).is_err());
    }
}
