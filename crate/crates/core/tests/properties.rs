//! Structural invariants checked over random inputs.

use std::f64::consts::PI;

use proptest::prelude::*;
use swave::density::{bh_probabilities, kde, KdeOutcome};
use swave::fft::LatticeFft;
use swave::grid::TorusGrid;
use swave::integrals::{cd_integral, AdaptedIntegrand, NoiseContext, Target};
use swave::kernels::{inf_eta_demo, j_delta, jbar_delta, wave_ft, Kernel, TimeRule};
use swave::malliavin::solve_derivative_full;
use swave::measure::{discretize_measure, SpectralMeasureSpec};
use swave::noise::{realize_field_increment_complex, ConsBasis, CounterNormals};
use swave::solver::{solve_mild, solve_picard, Coefficient, Coefficients, SolverConfig};

fn config(d: usize, cutoff: usize, beta: f64, steps: usize) -> SolverConfig {
    let grid = TorusGrid::new(d, 1.0, cutoff).unwrap();
    let m = discretize_measure(&SpectralMeasureSpec::Riesz { beta }, &grid).unwrap();
    SolverConfig::new(m, steps, 1.0).unwrap()
}

fn sin_drift(sigma: f64) -> Coefficients {
    Coefficients::new(Coefficient::Const { value: sigma }, Coefficient::sin())
}

/// A deterministic but irregular lattice field, indexed by `salt`.
fn field(len: usize, rows: usize, salt: u64) -> Vec<f64> {
    let mut g = CounterNormals::new(salt, 7, rows);
    (0..rows * len)
        .map(|i| {
            g.seek(i % len, i / len);
            g.next_pair().0
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wave_transform_is_below_both_envelopes(t in 0.0..5.0f64, r in 0.0..50.0f64) {
        let g2 = wave_ft(t, r).powi(2);
        let envelope = if r == 0.0 { t * t } else { (t * t).min(1.0 / (4.0 * PI * PI * r * r)) };
        prop_assert!(g2 <= envelope * (1.0 + 1e-12), "{g2} > {envelope}");
    }

    #[test]
    fn inf_eta_is_non_increasing_and_vanishes(s in 0.05..2.0f64, xi in -3.0..3.0f64) {
        let reach = 1.0 / (2.0 * s) + xi.abs();
        let radii: Vec<f64> = (0..12).map(|i| reach * i as f64 / 8.0).collect();
        let inf = inf_eta_demo(s, &[xi], &radii).unwrap();
        prop_assert!(inf.windows(2).all(|w| w[1] <= w[0]), "{inf:?}");
        for (r, v) in radii.iter().zip(&inf) {
            if *r > reach {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn j_delta_grows_and_is_dominated(beta in 0.2..1.8f64, k in 1usize..32) {
        let cfg = config(2, 2, beta, 8);
        let h = 1.0 / 32.0;
        let j = |k: usize| j_delta(k as f64 * h, &Kernel::Wave, &cfg.measure, None, TimeRule::RightRiemann { steps: k }).unwrap();
        let (a, b) = (j(k), j(k + 1));
        prop_assert!(b >= a);
        let bar = jbar_delta(k as f64 * h, &Kernel::Wave, TimeRule::RightRiemann { steps: k }).unwrap();
        prop_assert!(a <= cfg.measure.total_mass() * bar * (1.0 + 1e-12));
    }

    #[test]
    fn bh_probability_is_non_increasing(norms in prop::collection::vec(0.0..2.0f64, 1..200)) {
        let ns = [1.0, 2.0, 5.0, 10.0, 100.0, 1000.0];
        let p = bh_probabilities(&norms, &ns);
        prop_assert!(p.windows(2).all(|w| w[1].mean <= w[0].mean));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noise_fields_are_real(seed in any::<u64>(), d in 1usize..=3, cutoff in 1usize..=3) {
        let cfg = config(d, cutoff, 0.5 * d as f64, 3);
        let noise = cfg.sample(seed, 0).unwrap();
        let fft = LatticeFft::new(cfg.grid());
        for j in 0..cfg.steps {
            let c = realize_field_increment_complex(&noise, j, &cfg.measure, &fft).unwrap();
            let scale = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
            prop_assert!(c.iter().all(|z| z.im.abs() <= 1e-12 * scale.max(1.0)));
        }
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), replica in 0u64..1000) {
        let cfg = config(2, 2, 1.0, 4);
        prop_assert_eq!(cfg.sample(seed, replica).unwrap(), cfg.sample(seed, replica).unwrap());
    }

    #[test]
    fn solution_starts_at_zero(seed in any::<u64>(), sigma in 0.1..3.0f64) {
        let cfg = config(2, 2, 1.0, 6);
        let u = solve_mild(&cfg, &sin_drift(sigma), &cfg.sample(seed, 0).unwrap()).unwrap();
        prop_assert!(u.frame(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn future_noise_does_not_reach_the_past(seed in any::<u64>(), j in 0usize..6, factor in -3.0..3.0f64) {
        let cfg = config(2, 2, 1.0, 6);
        let coeffs = sin_drift(1.0);
        let noise = cfg.sample(seed, 0).unwrap();
        let mut changed = noise.clone();
        for b in changed.step_mut(j) {
            *b *= factor;
        }
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let v = solve_mild(&cfg, &coeffs, &changed).unwrap();
        for i in 0..=j {
            prop_assert_eq!(u.frame(i), v.frame(i));
        }
    }

    #[test]
    fn doubling_sigma_doubles_the_additive_solution(seed in any::<u64>(), sigma in 0.1..3.0f64) {
        let cfg = config(2, 2, 1.0, 6);
        let noise = cfg.sample(seed, 0).unwrap();
        let one = Coefficients::new(Coefficient::Const { value: sigma }, Coefficient::Zero);
        let two = Coefficients::new(Coefficient::Const { value: 2.0 * sigma }, Coefficient::Zero);
        let u = solve_mild(&cfg, &one, &noise).unwrap();
        let v = solve_mild(&cfg, &two, &noise).unwrap();
        prop_assert!(u.frames().iter().zip(v.frames()).all(|(a, b)| 2.0 * a == *b));
    }

    #[test]
    fn picard_reaches_the_recursion(seed in any::<u64>(), extra in 0usize..3) {
        let cfg = config(2, 2, 1.0, 5);
        let coeffs = sin_drift(1.0);
        let noise = cfg.sample(seed, 0).unwrap();
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let p = solve_picard(&cfg, &coeffs, &noise, cfg.steps + extra).unwrap();
        let scale = u.frames().iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(u.frames().iter().zip(p.frames()).all(|(a, b)| (a - b).abs() <= 1e-12 * scale));
    }

    #[test]
    fn derivative_vanishes_from_the_target_on(seed in any::<u64>(), step in 1usize..=6, point in 0usize..25) {
        let cfg = config(2, 2, 1.0, 6);
        let coeffs = sin_drift(1.0);
        let noise = cfg.sample(seed, 0).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let u = solve_mild(&cfg, &coeffs, &noise).unwrap();
        let du = solve_derivative_full(&cfg, &coeffs, &noise, &u, &basis, Target { step, point }).unwrap();
        for j in step..cfg.steps {
            prop_assert!(du.coeffs.row(j).iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn integrals_are_linear_in_the_integrand(seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let cfg = config(2, 2, 1.0, 6);
        let grid = cfg.grid().clone();
        let noise = cfg.sample(seed, 0).unwrap();
        let basis = ConsBasis::new(&cfg.measure);
        let ctx = NoiseContext::new(&noise, &cfg.measure, &basis).unwrap();
        let rows = cfg.steps + 1;
        let f = field(grid.len(), rows, seed);
        let g = field(grid.len(), rows, seed ^ 1);
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let target = Target { step: cfg.steps, point: 3 };
        let lambda = |v: Vec<f64>| {
            let z = AdaptedIntegrand::deterministic(&grid, rows, v).unwrap();
            cd_integral(&Kernel::Wave, None, &z, &ctx, target).unwrap()
        };
        let (lf, lg, lm) = (lambda(f), lambda(g), lambda(mix));
        let expected = a * lf + b * lg;
        prop_assert!((lm - expected).abs() <= 1e-12 * (1.0 + (a * lf).abs() + (b * lg).abs()));
        prop_assert_eq!(lambda(vec![0.0; rows * grid.len()]), 0.0);
    }

    #[test]
    fn kde_integrates_to_one(seed in any::<u64>(), spread in 0.01..100.0f64) {
        let mut g = CounterNormals::new(seed, 0, 1);
        let samples: Vec<f64> = (0..1000)
            .map(|i| {
                g.seek(i, 0);
                let (x, y) = g.next_pair();
                spread * if i % 3 == 0 { x.powi(3) } else { y }
            })
            .collect();
        match kde(&samples, None).unwrap() {
            KdeOutcome::Curve(c) => prop_assert!((c.integral - 1.0).abs() < 1e-6, "{}", c.integral),
            KdeOutcome::Degenerate { .. } => prop_assert!(false, "continuous samples"),
        }
    }
}
