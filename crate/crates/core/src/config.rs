//! Run configuration: a strict TOML file plus command-line overrides.
//!
//! Every key is optional except `[grid] d`. Unknown or repeated keys are rejected, and each
//! numeric field is checked against a documented range. Defaults that depend on other fields
//! (the measure, the target point, the δ schedule) are filled in by [`RunConfig::parse`], so a
//! parsed config is fully populated and its digest describes exactly what runs.
//!
//! ```toml
//! seed = 7
//! replicas = 2000
//!
//! [grid]
//! d = 2
//! cutoff = 4
//!
//! [measure]
//! kind = "riesz"
//! beta = 1.5
//!
//! [coefficients.sigma]
//! kind = "const"
//! value = 1.0
//!
//! [coefficients.drift]
//! kind = "sin"
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{TorusGrid, DEFAULT_POINT_BUDGET};
use crate::integrals::Target;
use crate::kernels::{Kernel, Mollifier, MollifierFamily};
use crate::malliavin::{default_eps, window_steps};
use crate::measure::{discretize_measure, SpectralMeasureSpec};
use crate::solver::{Coefficient, Coefficients, ShiftVariant, SolverConfig};

pub const MAX_DIM: usize = 6;
pub const MAX_CUTOFF: usize = 512;
pub const MAX_STEPS: usize = 100_000;
pub const MAX_REPLICAS: usize = 10_000_000;
pub const MAX_WORKERS: usize = 1024;
pub const MAX_MOLLIFIER_N: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed of every noise path.
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo replicas, in `[1, 10⁷]`. Default 1000.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Worker threads, in `[1, 1024]`. Default 1. Never changes a result.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Output directory. Falls back to `$SWAVE_OUT`, then `./swave-out`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Drive every term of the shifted equation with the shifted solution.
    #[serde(default)]
    pub shifted_all_terms: bool,
    pub grid: GridSection,
    /// Default: Riesz with `β = d/2`.
    #[serde(default)]
    pub measure: Option<SpectralMeasureSpec>,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    #[serde(default)]
    pub mollifier: Option<Mollifier>,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub targets: TargetSection,
    #[serde(default)]
    pub schedules: ScheduleSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Spatial dimension, in `[1, 6]`.
    pub d: usize,
    /// Torus side `L`, in `(0, 10⁶]`. Default 1.
    #[serde(default = "default_side")]
    pub side: f64,
    /// Mode cutoff `K`, in `[0, 512]`; the lattice has `(2K+1)^d` points. Default 4.
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    /// Cap on `(2K+1)^d`. Default `2^24`.
    #[serde(default = "default_budget")]
    pub point_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Horizon `T`, in `(0, 10³]`. Default 1.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Time steps `N_t`, in `[1, 10⁵]`. Default 32.
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            horizon: default_horizon(),
            steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    /// Default `σ ≡ 1`.
    #[serde(default = "default_sigma")]
    pub sigma: Coefficient,
    /// Default `b = 0`.
    #[serde(default = "default_drift")]
    pub drift: Coefficient,
}

impl Default for CoefficientSection {
    fn default() -> Self {
        CoefficientSection {
            sigma: default_sigma(),
            drift: default_drift(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Lattice multi-indices `m` of the target points `z_m = mL/(2K+1)`. Default the origin.
    #[serde(default)]
    pub points: Option<Vec<Vec<usize>>>,
    /// Target time step in `[1, N_t]`. Default `N_t`.
    #[serde(default)]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Windows δ, each a positive multiple of `Δt` not above `t`. Default `t/2, t/4, t/8, t/16`
    /// when those are multiples of `Δt`.
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    /// Finite-difference steps, in `(0, 1]`. Default `10^{−1−k/2}` for `k = 0..6`.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_family")]
    pub mollifier_family: MollifierFamily,
    /// Strictly increasing mollifier indices in `[1, 10⁶]`. Default `1, 2, 4, 8, 16`.
    #[serde(default = "default_mollifier_n")]
    pub mollifier_n: Vec<u32>,
    /// Levels `n` of `P[‖Du‖² < 1/n]`, each positive. Default `1, 10, 100, 1000`.
    #[serde(default = "default_bh_n")]
    pub bh_n: Vec<f64>,
    /// KS level for the Gaussian oracle, in `(0, 1)`. Default 0.01.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            delta: None,
            eps: default_eps(),
            mollifier_family: default_family(),
            mollifier_n: default_mollifier_n(),
            bh_n: default_bh_n(),
            alpha: default_alpha(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Reduced sizes; every suite finishes in seconds.
    #[default]
    Quick,
    /// The sizes of the acceptance criteria.
    Full,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub scale: Scale,
}

fn default_replicas() -> usize {
    1000
}
fn default_workers() -> usize {
    1
}
fn default_kernel() -> Kernel {
    Kernel::Wave
}
fn default_side() -> f64 {
    1.0
}
fn default_cutoff() -> usize {
    4
}
fn default_budget() -> usize {
    DEFAULT_POINT_BUDGET
}
fn default_horizon() -> f64 {
    1.0
}
fn default_steps() -> usize {
    32
}
fn default_sigma() -> Coefficient {
    Coefficient::Const { value: 1.0 }
}
fn default_drift() -> Coefficient {
    Coefficient::Zero
}
fn default_family() -> MollifierFamily {
    MollifierFamily::Gaussian
}
fn default_mollifier_n() -> Vec<u32> {
    vec![1, 2, 4, 8, 16]
}
fn default_bh_n() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1000.0]
}
fn default_alpha() -> f64 {
    0.01
}

/// Command-line values that replace the file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn bad(field: &str, value: impl std::fmt::Display, range: &str) -> Error {
    Error::Config(format!("`{field}` = {value} is outside the accepted range {range}"))
}

fn check_int(field: &str, v: usize, lo: usize, hi: usize) -> Result<()> {
    if v < lo || v > hi {
        return Err(bad(field, v, &format!("[{lo}, {hi}]")));
    }
    Ok(())
}

fn check_real(field: &str, v: f64, range: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
    if !v.is_finite() || !ok(v) {
        return Err(bad(field, v, range));
    }
    Ok(())
}

fn check_coefficient(field: &str, c: &Coefficient) -> Result<()> {
    let values: Vec<f64> = match c {
        Coefficient::Zero => vec![],
        Coefficient::Const { value } => vec![*value],
        Coefficient::Linear { slope } => vec![*slope],
        Coefficient::Affine { intercept, slope } => vec![*intercept, *slope],
        Coefficient::Sin { amplitude, offset } => vec![*amplitude, *offset],
        Coefficient::Table { xs, ys } => xs.iter().chain(ys).copied().collect(),
    };
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(bad(field, v, "(finite reals)"));
    }
    c.validate().map_err(|e| Error::Config(format!("`{field}`: {e}")))
}

impl RunConfig {
    /// Parses, fills derived defaults, applies overrides and validates.
    pub fn parse(text: &str, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(r) = overrides.replicas {
            cfg.replicas = r;
        }
        if let Some(o) = &overrides.out {
            cfg.out = Some(o.clone());
        }
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        cfg.validate_basic()?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &Overrides) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    fn validate_basic(&self) -> Result<()> {
        check_int("grid.d", self.grid.d, 1, MAX_DIM)?;
        check_int("grid.cutoff", self.grid.cutoff, 0, MAX_CUTOFF)?;
        check_int("grid.point_budget", self.grid.point_budget, 1, usize::MAX)?;
        check_real("grid.side", self.grid.side, "(0, 1e6]", |v| v > 0.0 && v <= 1e6)?;
        check_real("time.horizon", self.time.horizon, "(0, 1e3]", |v| v > 0.0 && v <= 1e3)?;
        check_int("time.steps", self.time.steps, 1, MAX_STEPS)?;
        check_int("replicas", self.replicas, 1, MAX_REPLICAS)?;
        check_int("workers", self.workers, 1, MAX_WORKERS)
    }

    fn fill_defaults(&mut self) {
        let d = self.grid.d;
        if self.measure.is_none() {
            self.measure = Some(SpectralMeasureSpec::Riesz { beta: d as f64 / 2.0 });
        }
        if self.targets.points.is_none() {
            self.targets.points = Some(vec![vec![0; d]]);
        }
        if self.targets.step.is_none() {
            self.targets.step = Some(self.time.steps);
        }
        if self.schedules.delta.is_none() {
            let step = self.targets.step.unwrap_or(self.time.steps);
            let dt = self.time.horizon / self.time.steps as f64;
            let t = step as f64 * dt;
            let deltas: Vec<f64> = [2.0, 4.0, 8.0, 16.0]
                .iter()
                .map(|k| t / k)
                .filter(|&delta| window_steps(delta, dt).is_ok())
                .collect();
            self.schedules.delta = Some(deltas);
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.grid.d;
        self.measure()
            .validate(d)
            .map_err(|e| Error::Config(format!("`measure`: {e}")))?;
        self.kernel.validate().map_err(|e| Error::Config(format!("`kernel`: {e}")))?;
        if let Some(m) = &self.mollifier {
            check_int("mollifier.n", m.n as usize, 1, MAX_MOLLIFIER_N as usize)?;
        }
        TorusGrid::with_budget(d, self.grid.side, self.grid.cutoff, self.grid.point_budget)
            .map_err(|e| Error::Config(format!("`grid`: {e}")))?;
        check_coefficient("coefficients.sigma", &self.coefficients.sigma)?;
        check_coefficient("coefficients.drift", &self.coefficients.drift)?;

        let n = 2 * self.grid.cutoff + 1;
        let points = self.targets.points.as_deref().unwrap_or_default();
        if points.is_empty() {
            return Err(Error::Config("`targets.points` must list at least one point".into()));
        }
        for p in points {
            if p.len() != d {
                return Err(bad("targets.points", format!("{p:?}"), &format!("(multi-indices of length d = {d})")));
            }
            if let Some(&c) = p.iter().find(|&&c| c >= n) {
                return Err(bad("targets.points", c, &format!("[0, {}]", n - 1)));
            }
        }
        check_int("targets.step", self.target_step(), 1, self.time.steps)?;

        let dt = self.dt();
        let t = self.target_step() as f64 * dt;
        for &delta in self.deltas() {
            check_real("schedules.delta", delta, &format!("(0, {t}] in multiples of {dt}"), |v| {
                v > 0.0 && v <= t * (1.0 + 1e-12) && window_steps(v, dt).is_ok()
            })?;
        }
        if self.schedules.eps.is_empty() {
            return Err(Error::Config("`schedules.eps` must not be empty".into()));
        }
        for &e in &self.schedules.eps {
            check_real("schedules.eps", e, "(0, 1]", |v| v > 0.0 && v <= 1.0)?;
        }
        for &m in &self.schedules.mollifier_n {
            check_int("schedules.mollifier_n", m as usize, 1, MAX_MOLLIFIER_N as usize)?;
        }
        if self.schedules.mollifier_n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("`schedules.mollifier_n` must be strictly increasing".into()));
        }
        for &b in &self.schedules.bh_n {
            check_real("schedules.bh_n", b, "(0, inf)", |v| v > 0.0)?;
        }
        check_real("schedules.alpha", self.schedules.alpha, "(0, 1)", |v| v > 0.0 && v < 1.0)
    }

    pub fn measure(&self) -> &SpectralMeasureSpec {
        self.measure.as_ref().expect("filled by parse")
    }

    pub fn dt(&self) -> f64 {
        self.time.horizon / self.time.steps as f64
    }

    pub fn target_step(&self) -> usize {
        self.targets.step.unwrap_or(self.time.steps)
    }

    pub fn deltas(&self) -> &[f64] {
        self.schedules.delta.as_deref().unwrap_or_default()
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::with_budget(self.grid.d, self.grid.side, self.grid.cutoff, self.grid.point_budget)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let grid = self.grid()?;
        let measure = discretize_measure(self.measure(), &grid)?;
        let mut cfg = SolverConfig::new(measure, self.time.steps, self.time.horizon)?;
        cfg.kernel = self.kernel.clone();
        cfg.mollifier = self.mollifier;
        Ok(cfg)
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients::new(self.coefficients.sigma.clone(), self.coefficients.drift.clone())
    }

    /// Targets as flat lattice indices at the target step.
    pub fn targets(&self) -> Result<Vec<Target>> {
        let grid = self.grid()?;
        let step = self.target_step();
        Ok(self
            .targets
            .points
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|p| Target {
                step,
                point: grid.point_index(p),
            })
            .collect())
    }

    pub fn mollifier_schedule(&self) -> Vec<Mollifier> {
        self.schedules
            .mollifier_n
            .iter()
            .map(|&n| Mollifier {
                family: self.schedules.mollifier_family,
                n,
            })
            .collect()
    }

    pub fn shift_variant(&self) -> ShiftVariant {
        if self.shifted_all_terms {
            ShiftVariant::AllTerms
        } else {
            ShiftVariant::Verbatim
        }
    }

    /// SHA-256 of the canonical JSON form, in hex. The worker count and the output directory
    /// do not affect any result and are left out.
    pub fn digest(&self) -> String {
        hex::encode(self.digest_bytes())
    }

    pub fn digest_bytes(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.workers = 1;
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, &Overrides::default())
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let c = parse("[grid]\nd = 1\n").unwrap();
        assert_eq!(c.grid.side, 1.0);
        assert_eq!(c.grid.cutoff, 4);
        assert_eq!(c.measure(), &SpectralMeasureSpec::Riesz { beta: 0.5 });
        assert_eq!(c.kernel, Kernel::Wave);
        assert_eq!((c.time.horizon, c.time.steps), (1.0, 32));
        assert_eq!(c.coefficients.sigma, Coefficient::Const { value: 1.0 });
        assert_eq!(c.coefficients.drift, Coefficient::Zero);
        assert_eq!(c.replicas, 1000);
        assert_eq!(c.targets.points, Some(vec![vec![0]]));
        assert_eq!(c.target_step(), 32);
        assert_eq!(c.deltas(), &[0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(c.schedules.eps, default_eps());
        assert_eq!(c.verify.scale, Scale::Quick);
        c.solver_config().unwrap();
    }

    #[test]
    fn riesz_exponent_must_stay_below_dimension() {
        let e = parse("[grid]\nd = 2\n[measure]\nkind = \"riesz\"\nbeta = 2.5\n").unwrap_err();
        assert!(e.to_string().contains("beta"), "{e}");
    }

    #[test]
    fn duplicate_and_unknown_keys_are_rejected() {
        assert!(parse("[grid]\nd = 1\nd = 2\n").is_err());
        let e = parse("[grid]\nd = 1\ncutof = 3\n").unwrap_err();
        assert!(e.to_string().contains("cutof"), "{e}");
        assert!(parse("sed = 1\n[grid]\nd = 1\n").is_err());
    }

    #[test]
    fn zero_replicas_names_the_field_and_range() {
        let e = parse("replicas = 0\n[grid]\nd = 1\n").unwrap_err().to_string();
        assert!(e.contains("`replicas`") && e.contains("[1, 10000000]"), "{e}");
        let o = Overrides {
            replicas: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::parse("[grid]\nd = 1\n", &o).is_err());
    }

    #[test]
    fn out_of_range_fields_are_named() {
        for (text, field) in [
            ("[grid]\nd = 7\n", "grid.d"),
            ("[grid]\nd = 1\nside = -1.0\n", "grid.side"),
            ("[grid]\nd = 1\n[time]\nsteps = 0\n", "time.steps"),
            ("[grid]\nd = 1\n[targets]\npoints = [[9]]\n", "targets.points"),
            ("[grid]\nd = 1\n[schedules]\ndelta = [0.3]\n", "schedules.delta"),
            ("[grid]\nd = 1\n[schedules]\nmollifier_n = [2, 1]\n", "schedules.mollifier_n"),
        ] {
            let e = parse(text).unwrap_err().to_string();
            assert!(e.contains(field), "{text}: {e}");
        }
    }

    #[test]
    fn digest_ignores_workers_but_not_the_seed() {
        let a = parse("[grid]\nd = 1\n").unwrap();
        let mut b = a.clone();
        b.workers = 8;
        b.out = Some("elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
