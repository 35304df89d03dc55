//! One runner per subcommand. Each writes its results through [`Output`] and returns the
//! pass/fail state of its assertions; the manifest is written last whatever happens.

use std::path::PathBuf;
use std::process::ExitCode;

use serde_json::{json, Value};
use swave::config::RunConfig;
use swave::density::{density_report, KdeOutcome};
use swave::kernels::{a3_schedule, check_condition, default_schedule, ConditionId, Kernel};
use swave::measure::SpectralMeasureSpec;
use swave::malliavin::{derivative_norms, fd_check, nondegeneracy, random_direction, FdReport};
use swave::noise::ConsBasis;
use swave::par;
use swave::solver::{moment_report, solve_with, ShiftVariant, Stepper};
use swave::stats::Estimate;
use swave::verify::run_all;

use crate::output::{now, Output, SuiteEntry};

enum Failure {
    Core(swave::Error),
    Io(std::io::Error),
}

impl From<swave::Error> for Failure {
    fn from(e: swave::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Io(e) => format!("i/o error: {e}"),
        }
    }

    /// Bad parameters are usage errors; everything else is a failed run.
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(
                swave::Error::InvalidParameter { .. }
                | swave::Error::Config(_)
                | swave::Error::MemoryBudget { .. }
                | swave::Error::Regime(_),
            ) => 2,
            _ => 1,
        }
    }
}

type Outcome = Result<Vec<SuiteEntry>, Failure>;

fn entry(name: &str, passed: bool) -> SuiteEntry {
    SuiteEntry {
        name: name.to_string(),
        passed,
    }
}

pub fn execute(command: &str, cfg: &RunConfig, dir: PathBuf) -> ExitCode {
    let started = now();
    let mut out = match Output::new(dir.clone(), cfg.digest()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("swave: cannot create {}: {e}", dir.display());
            return ExitCode::from(1);
        }
    };
    let result = match command {
        "check-kernel" => check_kernel(cfg, &mut out),
        "simulate" => simulate(cfg, &mut out),
        "malliavin" => malliavin(cfg, &mut out),
        "density" => density(cfg, &mut out),
        "verify" => verify(cfg, &mut out),
        _ => unreachable!("clap admits only known subcommands"),
    };
    let (status, suites, error, code) = match result {
        Ok(suites) => {
            for s in &suites {
                println!("{} {}", if s.passed { "PASS" } else { "FAIL" }, s.name);
            }
            let passed = suites.iter().all(|s| s.passed);
            (if passed { "passed" } else { "failed" }, suites, None, u8::from(!passed))
        }
        Err(f) => {
            let msg = f.message();
            eprintln!("swave: {msg}");
            // Failure marker in place of the report.
            let _ = out.json(&format!("{command}.json"), &json!({"status": "error", "error": msg}));
            ("error", Vec::new(), Some(msg), f.exit_code())
        }
    };
    if let Err(e) = out.manifest(command, &started, status, &suites, error.as_deref()) {
        eprintln!("swave: cannot write manifest: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}

fn check_kernel(cfg: &RunConfig, out: &mut Output) -> Outcome {
    let wave = cfg.kernel == Kernel::Wave;
    let mut conditions = Vec::new();
    // The radial A3 quadrature exists for the wave kernel and for noise constant in space.
    if wave || matches!(cfg.measure(), SpectralMeasureSpec::DiracZero) {
        conditions.push(ConditionId::A3);
    }
    conditions.extend([ConditionId::A6, ConditionId::Integrability]);
    if wave {
        conditions.push(ConditionId::Sandwich);
    }
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for c in conditions {
        let schedule = match c {
            ConditionId::A3 => a3_schedule(cfg.time.horizon),
            _ => default_schedule(),
        };
        let r = check_condition(c, &cfg.kernel, cfg.measure(), cfg.grid.d, cfg.time.horizon, &schedule)?;
        let name = serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        for l in &r.levels {
            rows.push(vec![name.clone(), l.radius.to_string(), l.value.to_string()]);
        }
        reports.push(r);
    }
    out.json("check-kernel.json", &json!({"reports": reports}))?;
    out.csv("check-kernel.csv", &["condition", "radius", "value"], &rows)?;
    Ok(Vec::new())
}

fn simulate(cfg: &RunConfig, out: &mut Output) -> Outcome {
    let scfg = cfg.solver_config()?;
    let coeffs = cfg.coefficients();
    let targets = cfg.targets()?;
    let stepper = Stepper::new(&scfg);
    let values: Vec<Vec<f64>> = par::map_replicas(cfg.replicas, cfg.workers, |r| -> swave::Result<Vec<f64>> {
        let noise = scfg.sample(cfg.seed, r as u64)?;
        let u = solve_with(&stepper, &scfg, &coeffs, &noise)?;
        Ok(targets.iter().map(|t| u.at(t.step, t.point)).collect())
    })
    .into_iter()
    .collect::<swave::Result<_>>()?;

    let noise = scfg.sample(cfg.seed, 0)?;
    let u = solve_with(&stepper, &scfg, &coeffs, &noise)?;
    let mut buf = Vec::new();
    noise.write_binary(&mut buf, &cfg.digest_bytes())?;
    out.binary("noise-0.bin", &buf)?;
    buf.clear();
    u.write_binary(&mut buf, &cfg.digest_bytes())?;
    out.binary("field-0.bin", &buf)?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (ti, t) in targets.iter().enumerate() {
        let xs: Vec<f64> = values.iter().map(|v| v[ti]).collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        summaries.push(json!({"target": t, "mean": Estimate::of(&xs), "second_moment": Estimate::of(&sq)}));
        for (r, x) in xs.iter().enumerate() {
            rows.push(vec![r.to_string(), ti.to_string(), t.step.to_string(), t.point.to_string(), x.to_string()]);
        }
    }
    let moments = if cfg.replicas >= 2 {
        Some(moment_report(&scfg, &coeffs, cfg.seed, cfg.replicas, &cfg.mollifier_schedule(), cfg.workers)?)
    } else {
        None
    };
    out.json(
        "simulate.json",
        &json!({"replicas": cfg.replicas, "targets": summaries, "moments": moments}),
    )?;
    out.csv("simulate.csv", &["replica", "target", "step", "point", "value"], &rows)?;
    Ok(Vec::new())
}

/// Finite differences converge at first order, or the solution is linear in the noise and
/// they are exact up to rounding.
fn fd_consistent(r: &FdReport) -> bool {
    let first_order = r.slope_middle.is_some_and(|s| (0.8..=1.2).contains(&s));
    first_order || r.max_error() <= 1e-8 * (1.0 + r.derivative.abs())
}

fn malliavin(cfg: &RunConfig, out: &mut Output) -> Outcome {
    let scfg = cfg.solver_config()?;
    let coeffs = cfg.coefficients();
    let target = cfg.targets()?[0];
    let basis = ConsBasis::new(&scfg.measure);
    let noise = scfg.sample(cfg.seed, 0)?;
    let h = random_direction(scfg.steps, basis.len(), scfg.dt, target.step, cfg.seed);
    let primary = cfg.shift_variant();
    let other = match primary {
        ShiftVariant::Verbatim => ShiftVariant::AllTerms,
        ShiftVariant::AllTerms => ShiftVariant::Verbatim,
    };
    let fd_primary = fd_check(&scfg, &coeffs, &noise, &basis, &h, &cfg.schedules.eps, target, primary)?;
    let fd_other = fd_check(&scfg, &coeffs, &noise, &basis, &h, &cfg.schedules.eps, target, other)?;
    let all_terms = if primary == ShiftVariant::AllTerms { &fd_primary } else { &fd_other };
    let mut checks = vec![entry("fd-all-terms", fd_consistent(all_terms))];

    let norms = derivative_norms(&scfg, &coeffs, cfg.seed, cfg.replicas, target, cfg.workers)?;
    let fourth: Vec<f64> = norms.iter().map(|v| v * v).collect();
    let nd = if coeffs.sigma.is_constant() && !cfg.deltas().is_empty() && cfg.replicas >= 2 {
        Some(nondegeneracy(&scfg, &coeffs, cfg.seed, cfg.replicas, target, cfg.deltas(), cfg.workers)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    if let Some(r) = &nd {
        let violations: usize = r.levels.iter().map(|l| l.lower_bound_violations).sum();
        checks.push(entry("lower-bound-holds", violations == 0));
        checks.push(entry("ratio-bounded", r.ratio_bounded()));
        checks.push(entry("small-norm-probability-vanishes", r.probability_vanishes()));
        for l in &r.levels {
            rows.push(
                [
                    l.delta,
                    l.window_steps as f64,
                    l.j_delta,
                    l.jbar_delta,
                    l.remainder.mean,
                    l.remainder.se,
                    l.ratio.mean,
                    l.ratio.se,
                    l.below_third.mean,
                    l.below_third.se,
                    l.lower_bound_violations as f64,
                ]
                .iter()
                .map(|v| v.to_string())
                .collect(),
            );
        }
    }
    let fd_rows: Vec<Vec<String>> = [&fd_primary, &fd_other]
        .iter()
        .flat_map(|r| {
            let variant = serde_json::to_value(r.variant).ok().and_then(|v| v.as_str().map(str::to_string));
            let variant = variant.unwrap_or_default();
            r.eps
                .iter()
                .zip(&r.errors)
                .map(move |(e, err)| vec![variant.clone(), e.to_string(), err.to_string()])
                .collect::<Vec<_>>()
        })
        .collect();
    out.json(
        "malliavin.json",
        &json!({
            "target": target,
            "fd": [fd_primary, fd_other],
            "norm_sq": Estimate::of(&norms),
            "norm_fourth": Estimate::of(&fourth),
            "nondegeneracy": nd,
            "checks": checks_value(&checks),
        }),
    )?;
    out.csv("malliavin-fd.csv", &["variant", "eps", "error"], &fd_rows)?;
    if nd.is_some() {
        out.csv(
            "malliavin.csv",
            &[
                "delta",
                "window_steps",
                "j_delta",
                "jbar_delta",
                "remainder_mean",
                "remainder_se",
                "ratio_mean",
                "ratio_se",
                "below_third_mean",
                "below_third_se",
                "lower_bound_violations",
            ],
            &rows,
        )?;
    }
    Ok(checks)
}

fn checks_value(checks: &[SuiteEntry]) -> Value {
    serde_json::to_value(checks).unwrap_or(Value::Null)
}

fn density(cfg: &RunConfig, out: &mut Output) -> Outcome {
    let scfg = cfg.solver_config()?;
    let coeffs = cfg.coefficients();
    let target = cfg.targets()?[0];
    let (report, samples) = density_report(
        &scfg,
        &coeffs,
        cfg.seed,
        cfg.replicas,
        target,
        &cfg.schedules.bh_n,
        cfg.schedules.alpha,
        cfg.workers,
    )?;
    let mut checks = Vec::new();
    if let Some(o) = &report.oracle {
        checks.push(entry("oracle-variance", o.variance_within_3se));
        checks.push(entry("oracle-ks", o.ks_passed));
    }
    if let KdeOutcome::Curve(c) = &report.kde {
        checks.push(entry("kde-normalized", (c.integral - 1.0).abs() <= 1e-6));
        checks.push(entry("no-repeated-values", report.repeated_values == 0));
        let rows: Vec<Vec<String>> = c
            .x
            .iter()
            .zip(&c.density)
            .map(|(x, d)| vec![x.to_string(), d.to_string()])
            .collect();
        out.csv("density.csv", &["x", "density"], &rows)?;
    }
    let rows: Vec<Vec<String>> = samples
        .iter()
        .enumerate()
        .map(|(r, v)| vec![r.to_string(), v.to_string()])
        .collect();
    out.csv("density-samples.csv", &["replica", "value"], &rows)?;
    out.json("density.json", &json!({"report": report, "checks": checks_value(&checks)}))?;
    Ok(checks)
}

fn verify(cfg: &RunConfig, out: &mut Output) -> Outcome {
    let reports = run_all(cfg.verify.scale, cfg.seed, cfg.workers);
    let mut rows = Vec::new();
    for r in &reports {
        if let Some(e) = &r.error {
            rows.push(vec![r.suite.clone(), "error".into(), "false".into(), format!("{e:?}")]);
        }
        for c in &r.checks {
            rows.push(vec![r.suite.clone(), c.name.clone(), c.passed.to_string(), String::new()]);
        }
    }
    out.json(
        "verify.json",
        &json!({"scale": cfg.verify.scale, "seed": cfg.seed, "suites": reports}),
    )?;
    out.csv("verify.csv", &["suite", "check", "passed", "error"], &rows)?;
    Ok(reports.iter().map(|r| entry(&r.suite, r.passed)).collect())
}
