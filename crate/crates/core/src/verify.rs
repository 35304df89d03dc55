//! Self-checking property suites behind `swave verify` and the acceptance tests.
//!
//! Each suite builds its own configuration at fixed sizes, runs the relevant pipeline and
//! compares against an independent reference: a closed form, a second construction of the
//! same quantity, or a statistical test at a stated level. Every report is a pure function
//! of `(scale, seed)`; the worker count only changes the wall time.

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Scale;
use crate::density::{gaussian_oracle_check, gaussian_oracle_variance, sample_values};
use crate::error::Result;
use crate::grid::TorusGrid;
use crate::integrals::{
    cd_integral, ito_series_integral, mollifier_convergence, norm_0z, skorohod_elementary, target_integrand,
    AdaptedIntegrand, Composed, Constant, ElementaryProcess, NoiseContext, PointNoise, SpectrumEstimator, Sum,
    Target, WienerFunctional, ZSpectrum,
};
use crate::kernels::{check_condition, inf_eta_demo, j_delta, ConditionId, Kernel, Mollifier, MollifierFamily, TimeRule, Verdict};
use crate::malliavin::{
    default_eps, derivative_moment_report, derivative_norms, fd_check, nondegeneracy, random_direction,
    stationarity_check_dbu,
};
use crate::measure::{discretize_measure, SpectralMeasureSpec};
use crate::noise::{ConsBasis, CounterNormals};
use crate::par;
use crate::solver::{
    convergence_report, moment_report, solve_with, stationarity_check, Coefficient, Coefficients, ShiftVariant,
    SolverConfig, Stepper,
};
use crate::stats::{Estimate, StationarityAccumulator, THREE_SIGMA_ALPHA};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    /// Set when the suite stopped on an error; its checks are then incomplete.
    pub error: Option<String>,
    pub checks: Vec<Check>,
}

pub const SUITES: [&str; 9] = [
    "integral-equivalence",
    "isometry",
    "gaussian-oracle",
    "gradient-check",
    "mollifier-convergence",
    "uniform-bounds",
    "nondegeneracy",
    "kernel-conditions",
    "stationarity",
];

fn check(name: &str, passed: bool, detail: Value) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Runs one suite by name. Errors become a failed report rather than aborting the caller.
pub fn run_suite(name: &str, scale: Scale, seed: u64, workers: usize) -> Option<SuiteReport> {
    let out = match name {
        "integral-equivalence" => integral_equivalence(scale, seed),
        "isometry" => isometry(scale, seed, workers),
        "gaussian-oracle" => gaussian_oracle(scale, seed, workers),
        "gradient-check" => gradient_check(scale, seed),
        "mollifier-convergence" => mollifier_suite(scale, seed, workers),
        "uniform-bounds" => uniform_bounds(scale, seed, workers),
        "nondegeneracy" => nondegeneracy_suite(scale, seed, workers),
        "kernel-conditions" => kernel_conditions(),
        "stationarity" => stationarity(scale, seed, workers),
        _ => return None,
    };
    Some(match out {
        Ok(checks) => SuiteReport {
            suite: name.to_string(),
            passed: checks.iter().all(|c| c.passed),
            error: None,
            checks,
        },
        Err(e) => SuiteReport {
            suite: name.to_string(),
            passed: false,
            error: Some(e.to_string()),
            checks: Vec::new(),
        },
    })
}

pub fn run_all(scale: Scale, seed: u64, workers: usize) -> Vec<SuiteReport> {
    SUITES
        .iter()
        .map(|s| run_suite(s, scale, seed, workers).expect("known suite"))
        .collect()
}

fn riesz_config(d: usize, cutoff: usize, beta: f64, steps: usize) -> Result<SolverConfig> {
    let grid = TorusGrid::new(d, 1.0, cutoff)?;
    let m = discretize_measure(&SpectralMeasureSpec::Riesz { beta }, &grid)?;
    SolverConfig::new(m, steps, 1.0)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// `σ(v) = 1 + ½ sin v`, bounded away from zero.
fn smooth_sigma() -> Coefficient {
    Coefficient::Sin {
        amplitude: 0.5,
        offset: 1.0,
    }
}

fn combined_se(a: &Estimate, b: &Estimate) -> f64 {
    (a.se * a.se + b.se * b.se).sqrt()
}

/// Convolution, Itô-series and elementary-Skorohod constructions of `Λ·M^Z` on one path each
/// for random adapted integrands `Z_j(z) = a + b sin(c Σ_{j'<j} ΔM_{j'}(z))` and random
/// Gaussian mollifiers.
fn integral_equivalence(scale: Scale, seed: u64) -> Result<Vec<Check>> {
    let (cutoff, steps, count) = match scale {
        Scale::Full => (4, 32, 100),
        Scale::Quick => (2, 8, 10),
    };
    let cfg = riesz_config(2, cutoff, 1.0, steps)?;
    let grid = cfg.grid().clone();
    let basis = ConsBasis::new(&cfg.measure);
    let dt = cfg.dt;
    let mut worst_ito: f64 = 0.0;
    let mut worst_sk: f64 = 0.0;
    for i in 0..count {
        let mut g = CounterNormals::new(seed ^ 0x1e9, i as u64, 1);
        g.seek(0, 0);
        let (na, nb) = g.next_pair();
        let (nc, _) = g.next_pair();
        let (a, b, c) = (1.0 + 0.5 * na, nb, 0.5 + nc.abs());
        let moll = Mollifier::new(MollifierFamily::Gaussian, 1 + (i % 4) as u32)?;
        let target = Target {
            step: steps,
            point: (i * 7) % grid.len(),
        };
        let noise = cfg.sample(seed, i as u64)?;
        let ctx = NoiseContext::new(&noise, &cfg.measure, &basis)?;
        let z = AdaptedIntegrand::from_causal(&ctx, |_, past| {
            (0..grid.len())
                .map(|x| a + b * (0..past.len()).map(|k| c * past.field(k)[x]).sum::<f64>().sin())
                .collect()
        })?;
        let cd = cd_integral(&cfg.kernel, Some(&moll), &z, &ctx, target)?;
        let phi = target_integrand(&cfg.kernel, Some(&moll), &z, dt, target)?;
        let ito = ito_series_integral(&phi, &ctx)?;
        // Skorohod side: X_{jm} = G_{jm} (a + b sin(PointNoise)), with G the kernel row.
        let one = AdaptedIntegrand::constant(&grid, steps + 1, 1.0);
        let kernel_rows = target_integrand(&cfg.kernel, Some(&moll), &one, dt, target)?;
        let mut sk = crate::stats::CompensatedSum::default();
        for j in 0..steps {
            for m in 0..grid.len() {
                let gk = kernel_rows.row(j)[m];
                let weights: Vec<f64> = (0..steps).map(|k| if k < j { c } else { 0.0 }).collect();
                let parts: Vec<Box<dyn WienerFunctional>> = vec![
                    Box::new(Constant(gk * a)),
                    Box::new(Composed {
                        inner: Box::new(PointNoise { point: m, weights }),
                        scale: gk * b,
                        f: f64::sin,
                        df: f64::cos,
                    }),
                ];
                let e = ElementaryProcess {
                    start: j,
                    end: j + 1,
                    set: vec![m],
                    x: Box::new(Sum(parts)),
                };
                sk.add(skorohod_elementary(&e, &ctx)?);
            }
        }
        worst_ito = worst_ito.max(rel_diff(cd, ito));
        worst_sk = worst_sk.max(rel_diff(cd, sk.value()));
    }
    let params = json!({"d": 2, "cutoff": cutoff, "steps": steps, "integrands": count, "tolerance": 1e-10});
    Ok(vec![
        check(
            "convolution-equals-ito-series",
            worst_ito <= 1e-10,
            json!({"params": params, "max_relative_difference": worst_ito}),
        ),
        check(
            "convolution-equals-elementary-skorohod",
            worst_sk <= 1e-10,
            json!({"params": params, "max_relative_difference": worst_sk}),
        ),
    ])
}

/// Monte Carlo second moment of `Λ·M^Z` against `‖Λ‖²_{0,Z}`. For `Z = σ(u)` the spectrum is
/// estimated from an independent batch, and the comparison uses both standard errors.
fn isometry(scale: Scale, seed: u64, workers: usize) -> Result<Vec<Check>> {
    let (replicas, steps) = match scale {
        Scale::Full => (10_000, 16),
        Scale::Quick => (1_000, 8),
    };
    let cfg = riesz_config(2, 2, 1.0, steps)?;
    let basis = ConsBasis::new(&cfg.measure);
    let target = Target { step: steps, point: 0 };
    let grid = cfg.grid().clone();
    let c = 1.5;
    let squares: Vec<f64> = par::map_replicas(replicas, workers, |r| -> Result<f64> {
        let noise = cfg.sample(seed, r as u64)?;
        let ctx = NoiseContext::new(&noise, &cfg.measure, &basis)?;
        let z = AdaptedIntegrand::constant(&grid, steps + 1, c);
        Ok(cd_integral(&cfg.kernel, None, &z, &ctx, target)?.powi(2))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mc_const = Estimate::of(&squares);
    let exact = norm_0z(&cfg.kernel, None, &ZSpectrum::Constant(c), &cfg.measure, steps, cfg.dt)?.norm0_sq;

    let coeffs = Coefficients::new(smooth_sigma(), Coefficient::sin());
    let stepper = Stepper::new(&cfg);
    let sigma = coeffs.sigma.clone();
    let squares: Vec<f64> = par::map_replicas(replicas, workers, |r| -> Result<f64> {
        let noise = cfg.sample(seed, r as u64)?;
        let u = solve_with(&stepper, &cfg, &coeffs, &noise)?;
        let ctx = NoiseContext::new(&noise, &cfg.measure, &basis)?;
        let z = AdaptedIntegrand::from_solution(&u, |v| sigma.value(v));
        Ok(cd_integral(&cfg.kernel, None, &z, &ctx, target)?.powi(2))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mc_sigma = Estimate::of(&squares);
    let norms: Vec<f64> = par::map_replicas(replicas, workers, |r| -> Result<f64> {
        let noise = cfg.sample(seed, (replicas + r) as u64)?;
        let u = solve_with(&stepper, &cfg, &coeffs, &noise)?;
        let z = AdaptedIntegrand::from_solution(&u, |v| sigma.value(v));
        let spectrum = SpectrumEstimator::single(&grid, steps + 1, &z)?;
        Ok(norm_0z(&cfg.kernel, None, &spectrum, &cfg.measure, steps, cfg.dt)?.norm0_sq)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let norm_sigma = Estimate::of(&norms);
    let gap = (mc_sigma.mean - norm_sigma.mean).abs();
    let params = json!({"d": 2, "cutoff": 2, "steps": steps, "replicas": replicas});
    Ok(vec![
        check(
            "constant-integrand",
            mc_const.covers(exact, 3.0),
            json!({"params": params, "c": c, "monte_carlo": to_value(&mc_const), "norm0_sq": exact}),
        ),
        check(
            "solution-integrand",
            gap <= 3.0 * combined_se(&mc_sigma, &norm_sigma),
            json!({
                "params": params,
                "sigma": to_value(&coeffs.sigma),
                "monte_carlo": to_value(&mc_sigma),
                "norm0_sq": to_value(&norm_sigma),
            }),
        ),
    ])
}

/// `σ = 1`, `b = 0`: `u(t,x)` is centred Gaussian with variance `σ²𝒥_n(t)`.
fn gaussian_oracle(scale: Scale, seed: u64, workers: usize) -> Result<Vec<Check>> {
    let (d, steps, replicas) = match scale {
        Scale::Full => (4, 64, 10_000),
        Scale::Quick => (2, 16, 2_000),
    };
    let cfg = riesz_config(d, 2, 1.5, steps)?;
    let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Zero);
    let target = Target { step: steps, point: 0 };
    let samples = sample_values(&cfg, &coeffs, seed, replicas, target, workers)?;
    let variance = gaussian_oracle_variance(&cfg, &coeffs, steps)?;
    let r = gaussian_oracle_check(&samples, variance, 0.01)?;
    let params = json!({"d": d, "cutoff": 2, "beta": 1.5, "steps": steps, "replicas": replicas});
    Ok(vec![
        check(
            "variance-within-3se",
            r.variance_within_3se,
            json!({"params": params, "oracle_variance": variance, "sample_variance": to_value(&r.sample_variance)}),
        ),
        check(
            "ks-normal",
            r.ks_passed,
            json!({"params": params, "alpha": r.alpha, "ks": to_value(&r.ks)}),
        ),
    ])
}

/// Finite differences of the shifted solution against the directional derivative.
fn gradient_check(scale: Scale, seed: u64) -> Result<Vec<Check>> {
    let steps = match scale {
        Scale::Full => 16,
        Scale::Quick => 8,
    };
    let cfg = riesz_config(2, 2, 1.0, steps)?;
    let basis = ConsBasis::new(&cfg.measure);
    let target = Target { step: steps, point: 0 };
    let noise = cfg.sample(seed, 0)?;
    let h = random_direction(steps, basis.len(), cfg.dt, steps, seed);
    let eps = default_eps();
    let nonlinear = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::sin());
    let all = fd_check(&cfg, &nonlinear, &noise, &basis, &h, &eps, target, ShiftVariant::AllTerms)?;
    let verbatim = fd_check(&cfg, &nonlinear, &noise, &basis, &h, &eps, target, ShiftVariant::Verbatim)?;
    let slope_ok = all.slope_full.is_some_and(|s| (0.8..=1.2).contains(&s));

    let additive = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Zero);
    let lin = fd_check(&cfg, &additive, &noise, &basis, &h, &eps, target, ShiftVariant::AllTerms)?;
    let u = crate::solver::solve_mild(&cfg, &additive, &noise)?;
    let scale_u = 1.0 + u.at(target.step, target.point).abs() + lin.derivative.abs();
    // (u^{εh} − u)/ε loses about |u|·ulp/ε; allow a few thousand ulps of headroom.
    let rounding: Vec<f64> = eps.iter().map(|e| 4096.0 * f64::EPSILON * scale_u / e).collect();
    let additive_ok = lin.errors.iter().zip(&rounding).all(|(err, bound)| err <= bound);
    let params = json!({"d": 2, "cutoff": 2, "steps": steps});
    Ok(vec![
        check(
            "nonlinear-slope",
            slope_ok,
            json!({"params": params, "range": [0.8, 1.2], "all_terms": to_value(&all), "verbatim": to_value(&verbatim)}),
        ),
        check(
            "additive-rounding",
            additive_ok,
            json!({"params": params, "report": to_value(&lin), "rounding_bounds": rounding}),
        ),
    ])
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// `‖Λ_n − Λ‖_{0,Z}` and `Ê sup|u_n − u|²` along doubling Gaussian indices, and the exact
/// collapse of the band-limit family once it covers the lattice.
fn mollifier_suite(scale: Scale, seed: u64, workers: usize) -> Result<Vec<Check>> {
    let (replicas, steps, cutoff) = match scale {
        Scale::Full => (1_000, 16, 2),
        Scale::Quick => (200, 8, 2),
    };
    let cfg = riesz_config(2, cutoff, 1.0, steps)?;
    let coeffs = Coefficients::new(smooth_sigma(), Coefficient::sin());
    let gaussian: Vec<Mollifier> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&n| Mollifier::new(MollifierFamily::Gaussian, n))
        .collect::<Result<_>>()?;
    let band: Vec<Mollifier> = (1..=cutoff as u32 + 1)
        .map(|n| Mollifier::new(MollifierFamily::BandLimit, n))
        .collect::<Result<_>>()?;

    let stepper = Stepper::new(&cfg);
    let sigma = coeffs.sigma.clone();
    let mut est = SpectrumEstimator::new(cfg.grid(), steps + 1);
    let zs: Vec<AdaptedIntegrand> = par::map_replicas(replicas, workers, |r| -> Result<AdaptedIntegrand> {
        let noise = cfg.sample(seed, r as u64)?;
        let u = solve_with(&stepper, &cfg, &coeffs, &noise)?;
        Ok(AdaptedIntegrand::from_solution(&u, |v| sigma.value(v)))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    for z in &zs {
        est.add(z)?;
    }
    let empirical = est.finish()?;
    let mut checks = Vec::new();
    for (label, z) in [("constant", ZSpectrum::Constant(1.0)), ("solution", empirical)] {
        let g = mollifier_convergence(&cfg.kernel, &z, &cfg.measure, &gaussian, None, steps, cfg.dt)?;
        let b = mollifier_convergence(&cfg.kernel, &z, &cfg.measure, &band, None, steps, cfg.dt)?;
        let band_ok = band
            .iter()
            .zip(&b)
            .all(|(m, &v)| if m.n as usize >= cutoff { v == 0.0 } else { v > 0.0 });
        checks.push(check(
            &format!("kernel-norm-gaussian-{label}"),
            non_increasing(&g) && g.windows(2).all(|w| w[1] < w[0]),
            json!({"n": [1, 2, 4, 8, 16], "distance": g}),
        ));
        checks.push(check(
            &format!("kernel-norm-band-limit-{label}"),
            band_ok,
            json!({"n": band.iter().map(|m| m.n).collect::<Vec<_>>(), "distance": b}),
        ));
    }
    let levels = convergence_report(&cfg, &coeffs, seed, replicas, &gaussian, workers)?;
    let errs: Vec<f64> = levels.iter().map(|l| l.sup_mean_sq_error.estimate.mean).collect();
    checks.push(check(
        "solution-error-gaussian",
        non_increasing(&errs),
        json!({"replicas": replicas, "levels": to_value(&levels)}),
    ));
    let levels = convergence_report(&cfg, &coeffs, seed, replicas, &band, workers)?;
    let band_ok = levels.iter().all(|l| {
        let v = l.sup_mean_sq_error.estimate.mean;
        if l.mollifier.n as usize >= cutoff {
            v == 0.0
        } else {
            v > 0.0
        }
    });
    checks.push(check(
        "solution-error-band-limit",
        band_ok,
        json!({"replicas": replicas, "levels": to_value(&levels)}),
    ));
    Ok(checks)
}

/// Second moments of `u_n` and of `‖Du_n(t,x)‖²` along the Gaussian schedule: no level exceeds
/// the unmollified value by more than 3 combined SE, and from the second level on the largest
/// and smallest estimates (reference included) agree within 3 combined SE.
fn uniform_bounds(scale: Scale, seed: u64, workers: usize) -> Result<Vec<Check>> {
    let (replicas, steps) = match scale {
        Scale::Full => (2_000, 16),
        Scale::Quick => (200, 8),
    };
    let cfg = riesz_config(2, 2, 1.0, steps)?;
    let coeffs = Coefficients::new(smooth_sigma(), Coefficient::sin());
    let schedule: Vec<Mollifier> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&n| Mollifier::new(MollifierFamily::Gaussian, n))
        .collect::<Result<_>>()?;
    let m = moment_report(&cfg, &coeffs, seed, replicas, &schedule, workers)?;
    let moments: Vec<Estimate> = m.levels.iter().map(|l| l.sup_second_moment.estimate).collect();
    let moments_ok = stable(&m.reference.estimate, &moments) && m.gronwall_constant.is_finite();
    let target = Target { step: steps, point: 0 };
    let d = derivative_moment_report(&cfg, &coeffs, seed, replicas, target, &schedule, workers)?;
    let norms: Vec<Estimate> = d[1..].iter().map(|(_, e)| *e).collect();
    let derivative_ok = stable(&d[0].1, &norms);
    let levels: Vec<Value> = d
        .iter()
        .map(|(m, e)| json!({"mollifier": to_value(m), "norm_sq": to_value(e)}))
        .collect();
    Ok(vec![
        check("solution-moments", moments_ok, json!({"replicas": replicas, "report": to_value(&m)})),
        check(
            "derivative-moments",
            derivative_ok,
            json!({"replicas": replicas, "target": to_value(&target), "levels": levels}),
        ),
    ])
}

fn stable(reference: &Estimate, levels: &[Estimate]) -> bool {
    let bounded = levels
        .iter()
        .all(|e| e.mean.is_finite() && e.mean <= reference.mean + 3.0 * combined_se(e, reference));
    let mut tail: Vec<&Estimate> = levels.iter().skip(1).collect();
    tail.push(reference);
    let hi = tail.iter().copied().max_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
    let lo = tail.iter().copied().min_by(|a, b| a.mean.total_cmp(&b.mean)).unwrap();
    bounded && hi.mean - lo.mean <= 3.0 * combined_se(hi, lo)
}

/// Small-window decomposition of `‖Du‖²` for `σ = 1`, `b = sin`, and the closed form for `b = 0`.
fn nondegeneracy_suite(scale: Scale, seed: u64, workers: usize) -> Result<Vec<Check>> {
    let (replicas, steps) = match scale {
        Scale::Full => (1_000, 32),
        Scale::Quick => (200, 16),
    };
    let cfg = riesz_config(2, 2, 1.0, steps)?;
    let target = Target { step: steps, point: 0 };
    let deltas = [0.5, 0.25, 0.125, 0.0625];
    let coeffs = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::sin());
    let r = nondegeneracy(&cfg, &coeffs, seed, replicas, target, &deltas, workers)?;
    let violations: usize = r.levels.iter().map(|l| l.lower_bound_violations).sum();

    let additive = Coefficients::new(Coefficient::Const { value: 1.0 }, Coefficient::Zero);
    let norms = derivative_norms(&cfg, &additive, seed, 8, target, workers)?;
    let exact = j_delta(1.0, &cfg.kernel, &cfg.measure, None, TimeRule::RightRiemann { steps })?;
    let worst = norms.iter().map(|&v| rel_diff(v, exact)).fold(0.0, f64::max);
    let report = to_value(&r);
    Ok(vec![
        check("ratio-bounded", r.ratio_bounded(), report.clone()),
        check("small-norm-probability-vanishes", r.probability_vanishes(), report),
        check("lower-bound-holds", violations == 0, json!({"violations": violations})),
        check(
            "additive-closed-form",
            worst <= 1e-10,
            json!({"exact": exact, "max_relative_difference": worst, "replicas": norms.len()}),
        ),
    ])
}

fn kernel_conditions() -> Result<Vec<Check>> {
    let schedule = crate::kernels::default_schedule();
    let riesz = |beta: f64| SpectralMeasureSpec::Riesz { beta };
    let a6 = check_condition(ConditionId::A6, &Kernel::Wave, &riesz(1.0), 3, 1.0, &schedule)?;
    let a6_value = a6.levels[0].value;
    let mut checks = vec![check(
        "a6-closed-form",
        (a6_value - 1.0 / 3.0).abs() <= 1e-10 && a6.verdict == Verdict::Converged,
        json!({"value": a6_value, "expected": 1.0 / 3.0}),
    )];
    let betas = [0.5, 1.0, 1.5, 1.9, 2.1, 2.5, 2.9];
    let mut verdicts = Vec::new();
    let mut ok = true;
    for &beta in &betas {
        let r = check_condition(ConditionId::Integrability, &Kernel::Wave, &riesz(beta), 3, 1.0, &schedule)?;
        ok &= (r.verdict == Verdict::Converged) == (beta < 2.0);
        verdicts.push(json!({"beta": beta, "verdict": to_value(&r.verdict), "last": r.levels.last().map(|l| l.value)}));
    }
    checks.push(check("riesz-integrability", ok, json!({"d": 3, "levels": verdicts})));
    let radii = [0.0, 0.1, 0.3, 0.6, 1.0, 2.0];
    let inf = inf_eta_demo(0.5, &[0.3], &radii)?;
    checks.push(check(
        "inf-eta-vanishes",
        inf[0] > 0.0 && inf.last() == Some(&0.0),
        json!({"s": 0.5, "xi": [0.3], "radii": radii, "inf": inf}),
    ));
    let s = check_condition(ConditionId::Sandwich, &Kernel::Wave, &riesz(1.0), 3, 1.0, &schedule)?;
    let (c1, c2) = (s.constants["C1"], s.constants["C2"]);
    checks.push(check(
        "time-averaged-sandwich",
        c1 > 0.0 && c2.is_finite(),
        json!({"C1": c1, "C2": c2, "note": s.note}),
    ));
    Ok(checks)
}

/// `x`-independence of covariances for the noise fields, `u`, `sin u` and `D sin u`.
fn stationarity(scale: Scale, seed: u64, workers: usize) -> Result<Vec<Check>> {
    let (replicas, steps) = match scale {
        Scale::Full => (1_000, 8),
        Scale::Quick => (300, 4),
    };
    let cfg = riesz_config(2, 2, 1.0, steps)?;
    let coeffs = Coefficients::new(smooth_sigma(), Coefficient::sin());
    let grid = cfg.grid().clone();
    let shifts: Vec<usize> = (0..grid.len()).collect();
    let basis = ConsBasis::new(&cfg.measure);
    let fields: Vec<Vec<Vec<f64>>> = par::map_replicas(replicas, workers, |r| -> Result<Vec<Vec<f64>>> {
        let noise = cfg.sample(seed, r as u64)?;
        let ctx = NoiseContext::new(&noise, &cfg.measure, &basis)?;
        Ok((0..steps).map(|j| ctx.field(j).to_vec()).collect())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut acc = StationarityAccumulator::new(&grid, steps, &shifts);
    for f in &fields {
        acc.add(|c, a, b| f[c][a] * f[c][b]);
    }
    let noise = acc.finish(THREE_SIGMA_ALPHA);
    let s = stationarity_check(&cfg, &coeffs, seed, replicas, steps, f64::sin, THREE_SIGMA_ALPHA, workers)?;
    let dbu = stationarity_check_dbu(&cfg, &coeffs, seed, replicas, steps, f64::cos, THREE_SIGMA_ALPHA, workers)?;
    let params = json!({"d": 2, "cutoff": 2, "steps": steps, "replicas": replicas, "family_alpha": THREE_SIGMA_ALPHA});
    Ok(vec![
        check("noise-fields", noise.passed, json!({"params": params, "report": to_value(&noise)})),
        check("solution", s.u.passed, json!({"params": params, "report": to_value(&s.u)})),
        check("sin-solution", s.bu.passed, json!({"params": params, "report": to_value(&s.bu)})),
        check("derivative-sin-solution", dbu.passed, json!({"params": params, "report": to_value(&dbu)})),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_none() {
        assert!(run_suite("no-such-suite", Scale::Quick, 0, 1).is_none());
    }

    #[test]
    fn kernel_suite_passes() {
        let r = run_suite("kernel-conditions", Scale::Quick, 0, 1).unwrap();
        assert!(r.passed, "{r:#?}");
    }
}
