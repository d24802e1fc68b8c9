//! Acceptance suite. Each test writes one `PASS`/`FAIL` line with its evidence to stderr, uncaptured, then asserts.
//!
//! `cargo test --test acceptance -- --nocapture --test-threads 1`

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use theta_stationary::config::Profile;
use theta_stationary::experiments::{
    run_2d_study, run_contraction, run_cubic_study, run_moment_bound, run_ou_study, run_rate_study,
    ExperimentSpec, FitStatus, DIVERGENCE_LEVEL, FACTOR_TOLERANCE, P_THRESHOLD, RATE_MIN_R2,
    RATE_SLOPE_RANGE, SE_BAND,
};
use theta_stationary::model::{
    builtin, check_conditions_sampled, verify_auxiliary_inequalities, PointSampler,
};
use theta_stationary::noise::EnsembleSeeding;
use theta_stationary::stationary::quartic_gibbs;
use theta_stationary::stepper::{
    simulate_coupled, simulate_ensemble_with, solve_implicit_with_stats, EnsembleOptions,
};
use theta_stationary::ThetaScheme;

fn report(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn spec(experiment: &str, problem: &str) -> ExperimentSpec {
    let (p, b) = builtin(problem).unwrap();
    ExperimentSpec::for_experiment(experiment, p, b, problem, Profile::Ci).unwrap()
}

#[test]
fn ou_stationary_variance() {
    let s = spec("ou", "ou");
    assert_eq!(
        (s.thetas[0], s.hs[0], s.horizon, s.n_paths),
        (0.5, 0.001, 10.0, 1000)
    );
    let start = Instant::now();
    let (r, _) = run_ou_study(&s).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = r.moment_timeline.last().unwrap();
    let within = (last.variance - 1.0).abs() <= SE_BAND * last.variance_se;
    let pass = within && secs < 30.0;
    report(
        "ou_stationary_variance",
        pass,
        format!(
            "terminal variance {:.4} ± {:.4} (SE), target 1, |z| = {:.2}, runtime {secs:.1} s",
            last.variance,
            last.variance_se,
            (last.variance - 1.0).abs() / last.variance_se
        ),
    );
    assert!(pass);
}

#[test]
fn ou_mean_decay() {
    let (r, _) = run_ou_study(&spec("ou", "ou")).unwrap();
    let worst_z = r
        .moment_timeline
        .iter()
        .filter(|m| m.mean_se > 0.0)
        .map(|m| (m.mean - m.mean_target).abs() / m.mean_se)
        .fold(0.0, f64::max);
    let last_k = (r.moment_timeline.last().unwrap().t / 0.001).round();
    let pass = r.mean_within_band && last_k == 1e4;
    report(
        "ou_mean_decay",
        pass,
        format!(
            "{} snapshots up to k = {last_k}, worst |z| = {worst_z:.2}",
            r.moment_timeline.len()
        ),
    );
    assert!(pass);
}

#[test]
fn ks_crossing_linear() {
    let mut passes = 0;
    let mut medians = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in 1..=10 {
        let mut s = spec("ou", "ou");
        s.seed = seed;
        let start = Instant::now();
        let (r, _) = run_ou_study(&s).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        assert_eq!(r.window, (2.0, 10.0));
        if r.window_median_p > P_THRESHOLD {
            passes += 1;
        }
        medians.push(format!("{:.2}", r.window_median_p));
    }
    let pass = passes >= 8 && slowest < 60.0;
    report(
        "ks_crossing_linear",
        pass,
        format!(
            "{passes}/10 seeds with median p over t in [2, 10] above {P_THRESHOLD} ({}), slowest seed {slowest:.1} s",
            medians.join(" ")
        ),
    );
    assert!(pass);
}

/// `I_ν(x)` by its ascending series.
fn bessel_i(nu: f64, x: f64) -> f64 {
    (0..40)
        .map(|k| {
            let k = k as f64;
            (x / 2.0).powf(2.0 * k + nu) / (libm::tgamma(k + 1.0) * libm::tgamma(k + nu + 1.0))
        })
        .sum()
}

#[test]
fn cubic_stationary_law() {
    let z = quartic_gibbs().normalization();
    let e = 0.125f64;
    let oracle = std::f64::consts::FRAC_PI_2 * e.exp() * (bessel_i(-0.25, e) - bessel_i(0.25, e));
    let printed_form = (bessel_i(0.25, e) + bessel_i(-0.25, e)) * (-e).exp();
    let z_ok = ((z - oracle) / oracle).abs() < 1e-8;

    let s = spec("cubic", "cubic1d");
    assert_eq!(
        (s.thetas[0], s.hs[0], s.horizon, s.n_paths),
        (1.0, 0.01, 10.0, 10_000)
    );
    let (r, _) = run_cubic_study(&s).unwrap();
    assert_eq!(r.window, (4.0, 10.0));
    let pass = z_ok && r.window_median_p > P_THRESHOLD;
    report(
        "cubic_stationary_law",
        pass,
        format!(
            "median p over t in [4, 10] = {:.3}; Z = {z:.15} vs Bessel oracle {oracle:.15} (rel {:.1e}); \
             (I_1/4 + I_-1/4)(1/8) e^(-1/8) = {printed_form:.6} differs by {:.1e} relative",
            r.window_median_p,
            ((z - oracle) / oracle).abs(),
            ((printed_form - z) / z).abs()
        ),
    );
    assert!(pass);
}

#[test]
fn rate_study_explicit() {
    let mut s = spec("rate", "ou");
    s.thetas = vec![0.0];
    s.n_paths = 1_000_000;
    assert_eq!(s.hs, vec![0.5, 0.25, 0.125, 0.0625]);
    let (r, _) = run_rate_study(&s).unwrap();
    let t = &r.thetas[0];
    let fit = t.var_fit.as_ref().expect("variance fit");
    assert_eq!(fit.status, FitStatus::Fitted);
    let (slope, r2) = (fit.slope.unwrap(), fit.r2.unwrap());
    let pass = (RATE_SLOPE_RANGE.0..=RATE_SLOPE_RANGE.1).contains(&slope) && r2 >= RATE_MIN_R2;
    let bias_only: Vec<(f64, f64)> = s.hs.iter().map(|&h| (h, h / (1.0 - h))).collect();
    let bias_slope = theta_stationary::experiments::fit_rate(&bias_only)
        .unwrap()
        .slope
        .unwrap();
    report(
        "rate_study_explicit",
        pass,
        format!(
            "variance-error slope {slope:.4}, r² {r2:.4} over {} paths (band [{}, {}]); errors {:?}; \
             slope of the noiseless error h/(1-h) on this grid is {bias_slope:.4}",
            s.n_paths,
            RATE_SLOPE_RANGE.0,
            RATE_SLOPE_RANGE.1,
            t.rows.iter().map(|row| format!("{:.5}", row.err_var.unwrap())).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn contraction_exactness() {
    let (problem, _) = builtin("ou").unwrap();
    let (alpha, h, n) = (2.0, 0.1, 20);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for theta in [0.0, 0.5, 1.0] {
        let scheme = ThetaScheme::new(theta, h).unwrap();
        let q = (1.0 - (1.0 - theta) * alpha * h) / (1.0 + theta * alpha * h);
        let seeding = EnsembleSeeding::new(11);
        for path in 0..8 {
            let (a, b) = simulate_coupled(
                &problem,
                &scheme,
                &[1.0],
                &[2.0],
                n,
                seeding.coupled_pair(path, h),
            )
            .unwrap();
            for k in 0..n {
                let d0 = (a.states[k][0] - b.states[k][0]).powi(2);
                let d1 = (a.states[k + 1][0] - b.states[k + 1][0]).powi(2);
                if d1.sqrt() >= 1e-3 {
                    worst = worst.max((d1 / d0 - q * q).abs());
                    checked += 1;
                }
            }
        }
        let mut s = spec("contraction", "ou");
        s.thetas = vec![theta];
        s.hs = vec![h];
        s.horizon = n as f64 * h;
        s.x0 = vec![1.0];
        s.y0 = Some(vec![2.0]);
        s.n_paths = 8;
        let (r, _) = run_contraction(&s).unwrap();
        worst = worst.max(r.max_factor_error.unwrap());
        checked += r.factor_steps_checked;
    }
    let pass = worst <= FACTOR_TOLERANCE && checked > 0;
    report(
        "contraction_exactness",
        pass,
        format!("worst |factor - q²| = {worst:.2e} over {checked} steps, theta in {{0, 0.5, 1}}, h = {h}"),
    );
    assert!(pass);
}

/// Root of the increasing map `x - θh f(x) - rhs` by bisection.
fn bisect(theta_h: f64, rhs: f64) -> f64 {
    let g = |x: f64| x + theta_h * (0.5 * x + 0.5 * x * x * x) - rhs;
    let (mut lo, mut hi) = (-rhs.abs() - 1.0, rhs.abs() + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn solver_oracle() {
    let (problem, _) = builtin("cubic1d").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_err: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..1000 {
        let theta = rng.random_range(0.05..=1.0);
        let h = rng.random_range(0.001..=1.0);
        let rhs = rng.random_range(-50.0..50.0);
        let scheme = ThetaScheme::new(theta, h).unwrap();
        let sol = solve_implicit_with_stats(&problem, &scheme, &[rhs]).unwrap();
        let root = bisect(theta * h, rhs);
        worst_err = worst_err.max((sol.x[0] - root).abs() / root.abs().max(1.0));
        worst_ratio = worst_ratio.max(sol.residual / scheme.solver.tolerance(&[rhs]));
    }
    let scheme = ThetaScheme::new(1.0, 0.01).unwrap();
    let ens = simulate_ensemble_with(
        &problem,
        &scheme,
        &[2.0],
        500,
        5,
        &[1000],
        EnsembleOptions::default(),
    )
    .unwrap();
    let stats = ens.solver_stats;
    let pass = worst_err <= 1e-10 && worst_ratio <= 1.0 && stats.max_residual_ratio <= 1.0;
    report(
        "solver_oracle",
        pass,
        format!(
            "1000 random solves: worst error vs bisection {worst_err:.2e}, worst residual/tolerance {worst_ratio:.3}; \
             {} ensemble steps: worst residual/tolerance {:.3}, {} fallback steps",
            stats.steps, stats.max_residual_ratio, stats.fallback_steps
        ),
    );
    assert!(pass);
}

#[test]
fn auxiliary_inequalities() {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["ou", "cubic1d"] {
        let (p, b) = builtin(name).unwrap();
        let r = verify_auxiliary_inequalities(&p, &b, &PointSampler::default(), 10_000).unwrap();
        let ok = r.worst_slack_dissipative >= -1e-10 && r.worst_slack_monotone >= -1e-10;
        pass &= ok;
        lines.push(format!(
            "{name}: worst slack {:.3e} / {:.3e} over {} samples",
            r.worst_slack_dissipative, r.worst_slack_monotone, r.samples
        ));
    }
    report("auxiliary_inequalities", pass, lines.join("; "));
    assert!(pass);
}

#[test]
fn negative_control() {
    let mut s = spec("moment", "cubic1d");
    s.hs = vec![0.5];
    s.x0 = vec![3.0];
    s.horizon = 10.0;
    s.thetas = vec![0.0];
    let (explicit, _) = run_moment_bound(&s).unwrap();
    s.thetas = vec![1.0];
    let (implicit, _) = run_moment_bound(&s).unwrap();
    let blew_up = explicit.divergence_time.is_some_and(|t| t < 10.0)
        && explicit.max_second_moment > DIVERGENCE_LEVEL;
    let bounded = !implicit.diverged && implicit.max_second_moment < 100.0;
    let pass = blew_up && bounded;
    report(
        "negative_control",
        pass,
        format!(
            "theta=0: second moment passes {DIVERGENCE_LEVEL:e} at t = {:?}; theta=1: max second moment {:.3}",
            explicit.divergence_time, implicit.max_second_moment
        ),
    );
    assert!(pass);
}

#[test]
fn two_dimensional_conditions() {
    let (p, b) = builtin("cubic2d").unwrap();
    let c = check_conditions_sampled(&p, &b, &PointSampler::default(), 10_000).unwrap();
    let one_sided = c.check("one_sided_lipschitz").unwrap();
    let diffusion = c.check("diffusion_lipschitz").unwrap();
    let conditions = one_sided.worst <= -4.0 + 1e-9
        && (diffusion.worst - 2.0).abs() <= 1e-12
        && (diffusion.best - 2.0).abs() <= 1e-12;

    let s = spec("twod", "cubic2d");
    assert_eq!(s.n_paths, 20_000);
    let (r, _) = run_2d_study(&s).unwrap();
    let pass = conditions && r.stabilized && r.conditions_ok;
    report(
        "two_dimensional_conditions",
        pass,
        format!(
            "one-sided ratio max {:.4}, diffusion ratio in [{:.15}, {:.15}]; histogram L1 drift early {:.4}, late {:.4} (ratio {:.1})",
            one_sided.worst, diffusion.best, diffusion.worst, r.early_l1, r.late_l1, r.drift_ratio
        ),
    );
    assert!(pass);
}
