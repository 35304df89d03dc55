//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes plain numbers and returns JSON text, so the page needs no
//! glue beyond `JSON.parse`. The same functions without the `wasm_bindgen` wrappers are
//! public for native tests.

use serde::Serialize;
use swave::density::{gaussian_oracle_check, gaussian_oracle_variance, kde, sample_values, KdeOutcome};
use swave::error::Result;
use swave::grid::TorusGrid;
use swave::integrals::Target;
use swave::kernels::{check_condition, default_schedule, ConditionId, Kernel, Level, Verdict};
use swave::measure::{discretize_measure, SpectralMeasureSpec};
use swave::solver::{solve_mild, Coefficient, Coefficients, SolverConfig};
use wasm_bindgen::prelude::*;

/// Largest Monte Carlo run the page may request; keeps the tab responsive.
pub const MAX_REPLICAS: usize = 20_000;

fn config(d: usize, cutoff: usize, beta: f64, steps: usize) -> Result<SolverConfig> {
    let grid = TorusGrid::new(d, 1.0, cutoff)?;
    let m = discretize_measure(&SpectralMeasureSpec::Riesz { beta }, &grid)?;
    SolverConfig::new(m, steps, 1.0)
}

#[derive(Debug, Serialize)]
pub struct FieldSnapshot {
    pub side: usize,
    /// `u(1, ·)` on the `side × side` lattice, row-major.
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

/// One path of the two-dimensional solution at `t = 1` with `σ` constant and `b = drift · sin`.
pub fn field_snapshot(cutoff: usize, beta: f64, steps: usize, sigma: f64, drift: f64, seed: u64) -> Result<FieldSnapshot> {
    let cfg = config(2, cutoff, beta, steps)?;
    let b = if drift == 0.0 {
        Coefficient::Zero
    } else {
        Coefficient::Sin {
            amplitude: drift,
            offset: 0.0,
        }
    };
    let coeffs = Coefficients::new(Coefficient::Const { value: sigma }, b);
    let u = solve_mild(&cfg, &coeffs, &cfg.sample(seed, 0)?)?;
    let values = u.frame(steps).to_vec();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FieldSnapshot {
        side: cfg.grid().per_axis(),
        values,
        min,
        max,
    })
}

#[derive(Debug, Serialize)]
pub struct KernelVerdict {
    pub d: usize,
    pub beta: f64,
    pub verdict: Verdict,
    pub levels: Vec<Level>,
}

/// Integrability of the wave kernel against the Riesz measure `|x|^{-β}` in dimension `d`.
pub fn kernel_verdict(d: usize, beta: f64) -> Result<KernelVerdict> {
    let spec = SpectralMeasureSpec::Riesz { beta };
    let r = check_condition(ConditionId::Integrability, &Kernel::Wave, &spec, d, 1.0, &default_schedule())?;
    Ok(KernelVerdict {
        d,
        beta,
        verdict: r.verdict,
        levels: r.levels,
    })
}

#[derive(Debug, Serialize)]
pub struct LawComparison {
    pub replicas: usize,
    pub oracle_variance: f64,
    pub sample_variance: f64,
    pub ks_p_value: f64,
    pub x: Vec<f64>,
    pub kde: Vec<f64>,
    /// `Normal(0, oracle_variance)` density on `x`.
    pub normal: Vec<f64>,
}

/// Samples `u(1, 0)` for `σ = 1`, `b = 0` on the two-dimensional torus and compares the kernel
/// density estimate with the exact Gaussian law. At most `points` curve points are returned.
pub fn law_comparison(cutoff: usize, beta: f64, steps: usize, replicas: usize, seed: u64, points: usize) -> Result<LawComparison> {
    let replicas = replicas.min(MAX_REPLICAS);
    let cfg = config(2, cutoff, beta, steps)?;
    let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Zero);
    let samples = sample_values(&cfg, &coeffs, seed, replicas, Target { step: steps, point: 0 }, 1)?;
    let variance = gaussian_oracle_variance(&cfg, &coeffs, steps)?;
    let check = gaussian_oracle_check(&samples, variance, 0.01)?;
    let (x, kde) = match kde(&samples, None)? {
        KdeOutcome::Curve(c) => {
            let stride = c.x.len().div_ceil(points.max(2));
            (
                c.x.iter().step_by(stride).copied().collect::<Vec<_>>(),
                c.density.iter().step_by(stride).copied().collect(),
            )
        }
        KdeOutcome::Degenerate { value } => (vec![value], vec![0.0]),
    };
    let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
    let normal = x.iter().map(|v| norm * (-0.5 * v * v / variance).exp()).collect();
    Ok(LawComparison {
        replicas,
        oracle_variance: variance,
        sample_variance: check.sample_variance.mean,
        ks_p_value: check.ks.p_value,
        x,
        kde,
        normal,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = fieldSnapshot)]
pub fn field_snapshot_js(cutoff: usize, beta: f64, steps: usize, sigma: f64, drift: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(field_snapshot(cutoff, beta, steps, sigma, drift, seed as u64))
}

#[wasm_bindgen(js_name = kernelVerdict)]
pub fn kernel_verdict_js(d: usize, beta: f64) -> std::result::Result<String, JsError> {
    to_js(kernel_verdict(d, beta))
}

#[wasm_bindgen(js_name = lawComparison)]
pub fn law_comparison_js(cutoff: usize, beta: f64, steps: usize, replicas: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(law_comparison(cutoff, beta, steps, replicas, seed as u64, 200))
}
