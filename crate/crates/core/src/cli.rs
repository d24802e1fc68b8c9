//! Command-line front end.
//!
//! Exit codes: 0 success or passing verdict, 2 usage or configuration error,
//! 3 runtime failure, 4 failing verdict.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ProblemSpec, Profile, RunConfig};
use crate::csvio::{write_table, Metadata};
use crate::error::{Error, Result};
use crate::experiments::{default_problem, run_named, steps_for, write_verdict, ExperimentSpec};
use crate::model::{
    check_conditions_sampled, regime_report, verify_auxiliary_inequalities, AuxiliaryReport,
    ConditionReport, PointSampler, RegimeReport, ThetaScheme,
};
use crate::noise::EnsembleSeeding;
use crate::parallel::init_thread_pool;
use crate::stepper::{
    simulate_ensemble_with, simulate_path, EnsembleOptions, FailurePolicy, SolverStats,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VERDICT_FAIL: i32 = 4;

const DEFAULT_THETA: f64 = 1.0;
const DEFAULT_H: f64 = 0.01;
const DEFAULT_STEPS: usize = 100;

#[derive(Debug, Parser)]
#[command(
    name = "theta-stationary",
    version,
    about = "Stochastic theta method and its numerical stationary laws"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one path, or an ensemble when `n_paths` > 1.
    Simulate(CommonArgs),
    /// Run a named experiment and write its tables and verdict.
    Experiment {
        #[command(flatten)]
        common: CommonArgs,
        /// Overrides the experiment named in the config.
        #[arg(long, short = 'e')]
        experiment: Option<String>,
    },
    /// Print the step-size regime and sampled condition checks.
    Check(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(value_name = "CONFIG")]
    pub config_positional: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "config_positional")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// The config file, if any, with command-line overrides applied.
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match self.config.as_ref().or(self.config_positional.as_ref()) {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.profile.is_some() {
            cfg.profile = self.profile;
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        Ok(cfg)
    }
}

impl clap::ValueEnum for Profile {
    fn value_variants<'a>() -> &'a [Self] {
        &[Profile::Ci, Profile::Full]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Profile::Ci => "ci",
            Profile::Full => "full",
        }))
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_runtime() {
        return EXIT_RUNTIME;
    }
    match err {
        Error::Io(_) | Error::EmptySample | Error::InsufficientData(_) | Error::Table(_) => {
            EXIT_RUNTIME
        }
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    init_thread_pool();
    let result = match &cli.command {
        Command::Simulate(common) => common.load().and_then(|cfg| cmd_simulate(&cfg, out)),
        Command::Experiment { common, experiment } => common.load().and_then(|mut cfg| {
            if experiment.is_some() {
                cfg.experiment = experiment.clone();
            }
            cmd_experiment(&cfg, out)
        }),
        Command::Check(common) => common.load().and_then(|cfg| cmd_check(&cfg, out)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Some(step) = e.failed_step() {
                let _ = writeln!(err, "failed at step {step}");
            }
            exit_code(&e)
        }
    }
}

fn scheme_of(cfg: &RunConfig) -> Result<ThetaScheme> {
    let solver = cfg.solver.unwrap_or_default();
    ThetaScheme::with_solver(
        cfg.theta.unwrap_or(DEFAULT_THETA),
        cfg.h.unwrap_or(DEFAULT_H),
        solver,
    )
}

fn n_steps_of(cfg: &RunConfig, h: f64) -> Result<usize> {
    match (cfg.n_steps, cfg.horizon) {
        (Some(_), Some(_)) => Err(Error::InvalidParameter(
            "give n_steps or horizon, not both".into(),
        )),
        (Some(n), None) => Ok(n),
        (None, Some(t)) => steps_for(t, h),
        (None, None) => Ok(DEFAULT_STEPS),
    }
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    problem: String,
    theta: f64,
    h: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    terminal_mean: Vec<f64>,
    terminal_second_moment: f64,
    solver_stats: SolverStats,
    file: PathBuf,
}

/// Writes `path.csv` (one path) or `ensemble.csv` (snapshots of every path) and prints a JSON summary.
pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let (problem, _) = cfg.resolve_problem()?;
    let scheme = scheme_of(cfg)?;
    let n_steps = n_steps_of(cfg, scheme.h)?;
    let n_paths = cfg.n_paths.unwrap_or(1);
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be positive".into()));
    }
    let d = problem.dim();
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![2.0; d]);
    if x0.len() != d {
        return Err(Error::InvalidParameter(format!(
            "x0 has length {}, problem dimension is {d}",
            x0.len()
        )));
    }
    let seed = cfg.seed();
    let label = cfg.problem_label();
    let dir = cfg.output_dir();
    let meta = Metadata::new(
        "simulate",
        seed,
        &format!("theta={} h={}", scheme.theta, scheme.h),
        &label,
        &cfg.profile().to_string(),
    )
    .with("paths", n_paths);
    let state_cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();

    let (terminal, stats, file) = if n_paths == 1 {
        let stream = EnsembleSeeding::new(seed).stream(0, scheme.h);
        let path = simulate_path(&problem, &scheme, &x0, n_steps, stream)?;
        let rows: Vec<Vec<f64>> = path
            .times
            .iter()
            .zip(&path.states)
            .map(|(t, x)| std::iter::once(*t).chain(x.iter().copied()).collect())
            .collect();
        let mut header = vec!["t"];
        header.extend(state_cols.iter().map(String::as_str));
        let file = dir.join("path.csv");
        write_table(&file, &meta, &header, &rows)?;
        (path.states.last().unwrap().clone(), path.solver_stats, file)
    } else {
        let every = cfg.snapshot_every.unwrap_or(n_steps.max(1));
        let mut steps: Vec<usize> = (0..=n_steps).step_by(every.max(1)).collect();
        if *steps.last().unwrap() != n_steps {
            steps.push(n_steps);
        }
        let ens = simulate_ensemble_with(
            &problem,
            &scheme,
            &x0,
            n_paths,
            seed,
            &steps,
            EnsembleOptions {
                on_failure: FailurePolicy::Abort,
                ..EnsembleOptions::default()
            },
        )?;
        let mut rows = Vec::with_capacity(steps.len() * n_paths);
        for s in &ens.snapshots {
            for p in 0..n_paths {
                rows.push(
                    [s.time, p as f64]
                        .into_iter()
                        .chain(s.point(d, p).iter().copied())
                        .collect(),
                );
            }
        }
        let mut header = vec!["t", "path"];
        header.extend(state_cols.iter().map(String::as_str));
        let file = dir.join("ensemble.csv");
        write_table(&file, &meta, &header, &rows)?;
        let last = ens.snapshots.last().unwrap();
        (last.values.clone(), ens.solver_stats, file)
    };

    let mut terminal_mean = vec![0.0; d];
    for point in terminal.chunks(d) {
        for (m, v) in terminal_mean.iter_mut().zip(point) {
            *m += v / n_paths as f64;
        }
    }
    let terminal_second_moment = terminal.iter().map(|v| v * v).sum::<f64>() / n_paths as f64;
    let summary = SimulateSummary {
        problem: label,
        theta: scheme.theta,
        h: scheme.h,
        n_steps,
        n_paths,
        seed,
        terminal_mean,
        terminal_second_moment,
        solver_stats: stats,
        file,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(EXIT_OK)
}

/// Experiment spec from the defaults of the named experiment, overridden by `cfg`.
pub fn experiment_spec(cfg: &RunConfig) -> Result<ExperimentSpec> {
    let name = cfg.experiment.as_deref().ok_or_else(|| {
        Error::InvalidParameter("no experiment named (use --experiment or `experiment`)".into())
    })?;
    let mut cfg = cfg.clone();
    if cfg.problem.is_none() {
        cfg.problem = Some(ProblemSpec::Builtin(default_problem(name).into()));
    }
    let cfg = &cfg;
    let (problem, bounds) = cfg.resolve_problem()?;
    let mut spec =
        ExperimentSpec::for_experiment(name, problem, bounds, &cfg.problem_label(), cfg.profile())?;
    if let Some(grid) = &cfg.theta_grid {
        spec.thetas = grid.clone();
    } else if let Some(theta) = cfg.theta {
        spec.thetas = vec![theta];
    }
    if let Some(grid) = &cfg.h_grid {
        spec.hs = grid.clone();
    } else if let Some(h) = cfg.h {
        spec.hs = vec![h];
    }
    match (cfg.n_steps, cfg.horizon) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParameter(
                "give n_steps or horizon, not both".into(),
            ))
        }
        (Some(n), None) => spec.horizon = n as f64 * spec.hs[0],
        (None, Some(t)) => spec.horizon = t,
        (None, None) => {}
    }
    if let Some(n) = cfg.n_paths {
        spec.n_paths = n;
    }
    if let Some(x0) = &cfg.x0 {
        spec.x0 = x0.clone();
    }
    if cfg.y0.is_some() {
        spec.y0 = cfg.y0.clone();
    }
    spec.snapshot_every = cfg.snapshot_every.or(spec.snapshot_every);
    spec.expect_divergence = cfg.expect_divergence;
    if let Some(solver) = cfg.solver {
        spec.solver = solver;
    }
    if let Some(n) = cfg.condition_samples {
        spec.condition_samples = n;
    }
    spec.seed = cfg.seed();
    spec.output_dir = Some(cfg.output_dir());
    Ok(spec)
}

/// Runs the experiment, writes its tables and `<name>_verdict.json`, and prints the verdict.
pub fn cmd_experiment(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let spec = experiment_spec(cfg)?;
    let mut verdict = run_named(&spec)?;
    let dir = cfg.output_dir();
    let path = dir.join(format!("{}_verdict.json", verdict.experiment));
    verdict.files.push(path);
    write_verdict(&dir, &verdict)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&verdict)?)?;
    Ok(if verdict.pass {
        EXIT_OK
    } else {
        EXIT_VERDICT_FAIL
    })
}

#[derive(Debug, Serialize)]
struct CheckOutput {
    problem: String,
    valid: bool,
    regime: RegimeReport,
    conditions: ConditionReport,
    auxiliary: AuxiliaryReport,
}

const DEFAULT_CHECK_SAMPLES: usize = 10_000;

/// Prints the regime report and sampled checks; exit 0 when all hold.
pub fn cmd_check(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let (problem, bounds) = cfg.resolve_problem()?;
    let scheme = scheme_of(cfg)?;
    let samples = cfg.condition_samples.unwrap_or(DEFAULT_CHECK_SAMPLES);
    let sampler = PointSampler::with_seed(cfg.seed());
    let regime = regime_report(&scheme, &bounds);
    let conditions = check_conditions_sampled(&problem, &bounds, &sampler, samples)?;
    let auxiliary = verify_auxiliary_inequalities(&problem, &bounds, &sampler, samples)?;
    let valid = regime.valid && conditions.pass && auxiliary.passed;
    let report = CheckOutput {
        problem: cfg.problem_label(),
        valid,
        regime,
        conditions,
        auxiliary,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(if valid { EXIT_OK } else { EXIT_VERDICT_FAIL })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("theta-stationary").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["check", "--profile", "huge"]).0, EXIT_USAGE);
        assert_eq!(
            run_args(&["check", "/nonexistent/cfg.json"]).0,
            EXIT_RUNTIME
        );
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn check_regimes() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, body: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            p.to_str().unwrap().to_string()
        };
        let ok = write(
            "a.json",
            r#"{"problem": "ou", "theta": 0.0, "h": 0.5, "condition_samples": 500}"#,
        );
        let bad = write(
            "b.json",
            r#"{"problem": "ou", "theta": 0.0, "h": 2.0, "condition_samples": 500}"#,
        );
        let cubic = write(
            "c.json",
            r#"{"problem": "cubic1d", "theta": 1.0, "h": 7.0, "condition_samples": 500}"#,
        );
        let (code, out, _) = run_args(&["check", &ok]);
        assert_eq!(code, EXIT_OK, "{out}");
        let (code, out, _) = run_args(&["check", &bad]);
        assert_eq!(code, EXIT_VERDICT_FAIL);
        assert!(out.contains("mean-square moment bound"), "{out}");
        assert_eq!(run_args(&["check", "--config", &cubic]).0, EXIT_OK);
    }

    #[test]
    fn missing_experiment_name_is_usage_error() {
        assert_eq!(run_args(&["experiment"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["experiment", "-e", "nope"]).0, EXIT_USAGE);
    }
}
