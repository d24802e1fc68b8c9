//! The stochastic theta method
//!
//! `X_{k+1} = X_k + θ h f(X_{k+1}) + (1−θ) h f(X_k) + g(X_k) ΔB_k`
//!
//! solved as `X_{k+1} = G⁻¹(X_k + (1−θ) h f(X_k) + g(X_k) ΔB_k)` with
//! `G(x) = x − θ h f(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SdeProblem, ThetaScheme};
use crate::noise::{EnsembleSeeding, IncrementStream};
use crate::parallel::{try_map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    AnalyticIfProvided,
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplicitSolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    pub jacobian: JacobianMode,
}

impl Default for ImplicitSolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_iters: 50,
            jacobian: JacobianMode::AnalyticIfProvided,
        }
    }
}

impl ImplicitSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite())
            || !(self.abs_tol > 0.0 && self.abs_tol.is_finite())
        {
            return Err(Error::InvalidParameter(
                "solver tolerances must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// Acceptance threshold `abs_tol + rel_tol |rhs|` on `|G(x) − rhs|`.
    pub fn tolerance(&self, rhs: &[f64]) -> f64 {
        self.abs_tol + self.rel_tol * norm(rhs)
    }
}

const MAX_HALVINGS: usize = 30;
const MAX_BRACKET_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 200;
const MAX_FIXED_POINT_ITERS: usize = 10_000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x − θ h f(x)`.
pub fn g_map(problem: &SdeProblem, scheme: &ThetaScheme, x: &[f64]) -> Result<Vec<f64>> {
    let fx = problem.drift(x)?;
    let th = scheme.theta * scheme.h;
    Ok(x.iter().zip(&fx).map(|(xi, fi)| xi - th * fi).collect())
}

/// Outcome of one implicit solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub used_fallback: bool,
}

/// Scratch buffers for repeated steps in dimension `d`.
#[derive(Debug, Clone)]
pub struct Workspace {
    fx: Vec<f64>,
    gx: Vec<f64>,
    rhs: Vec<f64>,
    r: Vec<f64>,
    jac: Vec<f64>,
    delta: Vec<f64>,
    trial: Vec<f64>,
    r_trial: Vec<f64>,
    probe: Vec<f64>,
    f_plus: Vec<f64>,
    f_minus: Vec<f64>,
}

impl Workspace {
    pub fn new(d: usize) -> Self {
        Self {
            fx: vec![0.0; d],
            gx: vec![0.0; d],
            rhs: vec![0.0; d],
            r: vec![0.0; d],
            jac: vec![0.0; d * d],
            delta: vec![0.0; d],
            trial: vec![0.0; d],
            r_trial: vec![0.0; d],
            probe: vec![0.0; d],
            f_plus: vec![0.0; d],
            f_minus: vec![0.0; d],
        }
    }
}

/// `out = x − θh f(x) − rhs`, returns `|out|`; `None` if the drift is not finite at `x`.
fn residual_into(
    problem: &SdeProblem,
    th: f64,
    x: &[f64],
    rhs: &[f64],
    f: &mut [f64],
    out: &mut [f64],
) -> Option<f64> {
    if problem.drift_into(x, f).is_err() {
        return None;
    }
    for i in 0..x.len() {
        out[i] = x[i] - th * f[i] - rhs[i];
    }
    let n = norm(out);
    n.is_finite().then_some(n)
}

/// `I − θh Df(x)`, row-major.
fn jacobian_into(problem: &SdeProblem, mode: JacobianMode, th: f64, x: &[f64], ws: &mut Workspace) {
    let d = x.len();
    let analytic =
        mode == JacobianMode::AnalyticIfProvided && problem.drift_jacobian_into(x, &mut ws.jac);
    if !analytic {
        ws.probe.copy_from_slice(x);
        for j in 0..d {
            let e = 1e-6 * (1.0 + x[j].abs());
            ws.probe[j] = x[j] + e;
            let _ = problem.drift_into(&ws.probe, &mut ws.f_plus);
            ws.probe[j] = x[j] - e;
            let _ = problem.drift_into(&ws.probe, &mut ws.f_minus);
            ws.probe[j] = x[j];
            for i in 0..d {
                ws.jac[i * d + j] = (ws.f_plus[i] - ws.f_minus[i]) / (2.0 * e);
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            ws.jac[i * d + j] = id - th * ws.jac[i * d + j];
        }
    }
}

/// Solves `a x = b` in place (`b` becomes `x`) by Gaussian elimination with partial pivoting.
fn lu_solve(a: &mut [f64], b: &mut [f64]) -> bool {
    let d = b.len();
    if d == 1 {
        if a[0] == 0.0 || !a[0].is_finite() {
            return false;
        }
        b[0] /= a[0];
        return b[0].is_finite();
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))
            .unwrap();
        if a[pivot * d + col] == 0.0 || !a[pivot * d + col].is_finite() {
            return false;
        }
        if pivot != col {
            for k in 0..d {
                a.swap(col * d + k, pivot * d + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..d {
            let factor = a[row * d + col] / a[col * d + col];
            for k in col..d {
                a[row * d + k] -= factor * a[col * d + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for row in (0..d).rev() {
        let mut s = b[row];
        for k in row + 1..d {
            s -= a[row * d + k] * b[k];
        }
        b[row] = s / a[row * d + row];
    }
    b.iter().all(|v| v.is_finite())
}

/// Damped Newton from `x = rhs`. Returns `(iterations, residual, converged)`.
fn newton(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    rhs: &[f64],
    x: &mut [f64],
    ws: &mut Workspace,
) -> (usize, f64, bool) {
    let cfg = &scheme.solver;
    let th = scheme.theta * scheme.h;
    let tol = cfg.tolerance(rhs);
    x.copy_from_slice(rhs);
    let Some(mut res) = residual_into(problem, th, x, rhs, &mut ws.fx, &mut ws.r) else {
        return (0, f64::INFINITY, false);
    };
    for iter in 0..cfg.max_iters {
        if res <= tol {
            return (iter, res, true);
        }
        jacobian_into(problem, cfg.jacobian, th, x, ws);
        for (dst, r) in ws.delta.iter_mut().zip(&ws.r) {
            *dst = -r;
        }
        if !lu_solve(&mut ws.jac, &mut ws.delta) {
            return (iter, res, false);
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..x.len() {
                ws.trial[i] = x[i] + t * ws.delta[i];
            }
            if let Some(r_new) =
                residual_into(problem, th, &ws.trial, rhs, &mut ws.fx, &mut ws.r_trial)
            {
                if r_new < res {
                    x.copy_from_slice(&ws.trial);
                    std::mem::swap(&mut ws.r, &mut ws.r_trial);
                    res = r_new;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return (iter + 1, res, res <= tol);
        }
    }
    (cfg.max_iters, res, res <= tol)
}

/// Scalar fallback: bracket the root of the increasing map `G(x) − rhs`, then bisect.
fn bisection_fallback(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    rhs: f64,
    start: f64,
) -> (f64, usize, f64) {
    let th = scheme.theta * scheme.h;
    let tol = scheme.solver.tolerance(&[rhs]);
    let mut f = [0.0];
    let mut r = [0.0];
    let resid = |x: f64, f: &mut [f64; 1], r: &mut [f64; 1]| -> Option<f64> {
        residual_into(problem, th, &[x], &[rhs], f, r).map(|_| r[0])
    };
    let mut iterations = 0;
    let mut width = 1.0 + (start - rhs).abs();
    let (mut lo, mut hi) = (start - width, start + width);
    loop {
        iterations += 1;
        let rl = resid(lo, &mut f, &mut r);
        let rh = resid(hi, &mut f, &mut r);
        match (rl, rh) {
            (Some(a), Some(b)) if a <= 0.0 && b >= 0.0 => break,
            _ if iterations > MAX_BRACKET_DOUBLINGS => return (start, iterations, f64::INFINITY),
            _ => {
                width *= 2.0;
                lo = start - width;
                hi = start + width;
            }
        }
    }
    let mut best = (start, f64::INFINITY);
    for _ in 0..MAX_BISECTIONS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let Some(rm) = resid(mid, &mut f, &mut r) else {
            break;
        };
        if rm.abs() < best.1 {
            best = (mid, rm.abs());
        }
        if rm.abs() <= tol || mid <= lo || mid >= hi {
            break;
        }
        if rm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (best.0, iterations, best.1)
}

/// Damped fixed point `x ← (1−ω) x + ω (rhs + θh f(x))`, halving `ω` whenever the residual grows.
fn fixed_point_fallback(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    rhs: &[f64],
    x: &mut [f64],
    ws: &mut Workspace,
) -> (usize, f64) {
    let th = scheme.theta * scheme.h;
    let tol = scheme.solver.tolerance(rhs);
    let mut res =
        residual_into(problem, th, x, rhs, &mut ws.fx, &mut ws.r).unwrap_or(f64::INFINITY);
    if !res.is_finite() {
        x.copy_from_slice(rhs);
        res = residual_into(problem, th, x, rhs, &mut ws.fx, &mut ws.r).unwrap_or(f64::INFINITY);
    }
    let mut omega: f64 = 1.0;
    for iter in 0..MAX_FIXED_POINT_ITERS {
        if res <= tol {
            return (iter, res);
        }
        // x − ω r equals (1−ω) x + ω (rhs + θh f(x)).
        for i in 0..x.len() {
            ws.trial[i] = x[i] - omega * ws.r[i];
        }
        match residual_into(problem, th, &ws.trial, rhs, &mut ws.fx, &mut ws.r_trial) {
            Some(r_new) if r_new < res => {
                x.copy_from_slice(&ws.trial);
                std::mem::swap(&mut ws.r, &mut ws.r_trial);
                res = r_new;
                omega = (omega * 2.0).min(1.0);
            }
            _ => {
                omega *= 0.5;
                if omega < 1e-12 {
                    return (iter + 1, res);
                }
            }
        }
    }
    (MAX_FIXED_POINT_ITERS, res)
}

fn solve_into(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    rhs: &[f64],
    x: &mut [f64],
    ws: &mut Workspace,
) -> Result<(usize, f64, bool)> {
    if scheme.theta == 0.0 || scheme.h == 0.0 {
        x.copy_from_slice(rhs);
        return Ok((0, 0.0, false));
    }
    let (iters, res, ok) = newton(problem, scheme, rhs, x, ws);
    if ok {
        return Ok((iters, res, false));
    }
    let tol = scheme.solver.tolerance(rhs);
    let (extra, res) = if x.len() == 1 {
        let start = if x[0].is_finite() { x[0] } else { rhs[0] };
        let (root, n, r) = bisection_fallback(problem, scheme, rhs[0], start);
        x[0] = root;
        (n, r)
    } else {
        fixed_point_fallback(problem, scheme, rhs, x, ws)
    };
    if res <= tol {
        Ok((iters + extra, res, true))
    } else {
        Err(Error::SolverFailure {
            last_iterate: x.to_vec(),
            residual: res,
            iterations: iters + extra,
        })
    }
}

/// `G⁻¹(rhs)`: damped Newton from `rhs`, with bisection (scalar) or damped fixed point fallback.
pub fn solve_implicit(problem: &SdeProblem, scheme: &ThetaScheme, rhs: &[f64]) -> Result<Vec<f64>> {
    solve_implicit_with_stats(problem, scheme, rhs).map(|s| s.x)
}

pub fn solve_implicit_with_stats(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    rhs: &[f64],
) -> Result<ImplicitSolution> {
    if rhs.len() != problem.dim() {
        return Err(Error::InvalidParameter(format!(
            "rhs has length {}, problem dimension is {}",
            rhs.len(),
            problem.dim()
        )));
    }
    let mut ws = Workspace::new(rhs.len());
    let mut x = vec![0.0; rhs.len()];
    let (iterations, residual, used_fallback) = solve_into(problem, scheme, rhs, &mut x, &mut ws)?;
    Ok(ImplicitSolution {
        x,
        iterations,
        residual,
        used_fallback,
    })
}

/// Running totals over accepted implicit solves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: u64,
    pub newton_iterations: u64,
    pub fallback_steps: u64,
    pub max_residual: f64,
    /// Largest ratio `residual / tolerance` over accepted steps; at most 1.
    pub max_residual_ratio: f64,
}

impl SolverStats {
    fn record(&mut self, iterations: usize, residual: f64, tol: f64, fallback: bool) {
        self.steps += 1;
        self.newton_iterations += iterations as u64;
        self.fallback_steps += fallback as u64;
        self.max_residual = self.max_residual.max(residual);
        self.max_residual_ratio = self.max_residual_ratio.max(residual / tol);
    }

    pub fn merge(&mut self, other: &SolverStats) {
        self.steps += other.steps;
        self.newton_iterations += other.newton_iterations;
        self.fallback_steps += other.fallback_steps;
        self.max_residual = self.max_residual.max(other.max_residual);
        self.max_residual_ratio = self.max_residual_ratio.max(other.max_residual_ratio);
    }
}

/// One step of the scheme from `x` into `out`.
pub fn step_into(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    x: &[f64],
    db: f64,
    out: &mut [f64],
    ws: &mut Workspace,
    stats: &mut SolverStats,
) -> Result<()> {
    problem.drift_into(x, &mut ws.fx)?;
    problem.diffusion_into(x, &mut ws.gx)?;
    let explicit_weight = (1.0 - scheme.theta) * scheme.h;
    for i in 0..x.len() {
        ws.rhs[i] = x[i] + explicit_weight * ws.fx[i] + ws.gx[i] * db;
    }
    let rhs = std::mem::take(&mut ws.rhs);
    let solved = solve_into(problem, scheme, &rhs, out, ws);
    if let Ok((iters, res, fallback)) = solved {
        if scheme.theta != 0.0 && scheme.h != 0.0 {
            stats.record(iters, res, scheme.solver.tolerance(&rhs), fallback);
        }
    }
    ws.rhs = rhs;
    solved?;
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "state",
            point: x.to_vec(),
        })
    }
}

/// `G⁻¹(x_k + (1−θ) h f(x_k) + g(x_k) db)`.
pub fn step(problem: &SdeProblem, scheme: &ThetaScheme, x: &[f64], db: f64) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(x.len());
    let mut out = vec![0.0; x.len()];
    step_into(
        problem,
        scheme,
        x,
        db,
        &mut out,
        &mut ws,
        &mut SolverStats::default(),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub states: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub solver_stats: SolverStats,
}

fn check_start(problem: &SdeProblem, x0: &[f64]) -> Result<()> {
    if x0.len() != problem.dim() {
        return Err(Error::InvalidParameter(format!(
            "x0 has length {}, problem dimension is {}",
            x0.len(),
            problem.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("x0 must be finite".into()));
    }
    Ok(())
}

/// `n_steps` steps from `x0`, driven by `stream`.
pub fn simulate_path(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    x0: &[f64],
    n_steps: usize,
    mut stream: IncrementStream,
) -> Result<PathResult> {
    check_start(problem, x0)?;
    let mut ws = Workspace::new(x0.len());
    let mut stats = SolverStats::default();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.to_vec());
    for k in 0..n_steps {
        let db = stream.next_increment();
        let mut next = vec![0.0; x0.len()];
        step_into(
            problem, scheme, &states[k], db, &mut next, &mut ws, &mut stats,
        )
        .map_err(|e| e.at_step(k))?;
        states.push(next);
    }
    let times = (0..=n_steps).map(|k| k as f64 * scheme.h).collect();
    Ok(PathResult {
        states,
        times,
        solver_stats: stats,
    })
}

/// Two paths from `x0` and `y0` driven by the same increments.
pub fn simulate_coupled(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    x0: &[f64],
    y0: &[f64],
    n_steps: usize,
    streams: (IncrementStream, IncrementStream),
) -> Result<(PathResult, PathResult)> {
    let (sx, sy) = streams;
    if sx.seed() != sy.seed() || sx.index() != sy.index() || sx.h() != sy.h() {
        return Err(Error::Misuse(
            "coupled streams must share seed, h and position".into(),
        ));
    }
    Ok((
        simulate_path(problem, scheme, x0, n_steps, sx)?,
        simulate_path(problem, scheme, y0, n_steps, sy)?,
    ))
}

/// Converts snapshot times to step indices, requiring each to sit on the grid.
pub fn snapshot_steps(times: &[f64], h: f64, n_steps: usize) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "snapshot time {t} must be >= 0"
                )));
            }
            if h == 0.0 {
                return if t == 0.0 {
                    Ok(0)
                } else {
                    Err(Error::InvalidParameter(
                        "h = 0 only admits snapshot t = 0".into(),
                    ))
                };
            }
            let k = (t / h).round();
            if (k * h - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "snapshot time {t} is not a multiple of h = {h}"
                )));
            }
            let k = k as usize;
            if k > n_steps {
                return Err(Error::InvalidParameter(format!(
                    "snapshot time {t} is beyond the horizon"
                )));
            }
            Ok(k)
        })
        .collect()
}

/// What an ensemble does when a path fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    /// Abort with the first failing path (in index order).
    #[default]
    Abort,
    /// Freeze a failing path at `+∞` from the failing step on.
    Saturate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnsembleOptions {
    pub execution: Execution,
    pub on_failure: FailurePolicy,
}

impl EnsembleOptions {
    pub fn sequential() -> Self {
        Self {
            execution: Execution::Sequential,
            ..Self::default()
        }
    }
}

/// States of every path at one snapshot, path-major: `values[p * dim + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub values: Vec<f64>,
    /// `max_{j ≤ step} |X_j|²` per path.
    pub running_sup_sq: Vec<f64>,
}

impl Snapshot {
    pub fn component(&self, dim: usize, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(dim).copied().collect()
    }

    pub fn point(&self, dim: usize, path: usize) -> &[f64] {
        &self.values[path * dim..(path + 1) * dim]
    }

    /// `|X|²` of every path.
    pub fn squared_norms(&self, dim: usize) -> Vec<f64> {
        self.values
            .chunks(dim)
            .map(|p| p.iter().map(|v| v * v).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub dim: usize,
    pub n_paths: usize,
    pub theta: f64,
    pub h: f64,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub snapshots: Vec<Snapshot>,
    /// `max_k |X_k|²` over steps up to the last snapshot, per path.
    pub path_sup_sq: Vec<f64>,
    /// Step at which a path failed under [`FailurePolicy::Saturate`].
    pub failed_at: Vec<Option<usize>>,
    pub solver_stats: SolverStats,
}

impl EnsembleResult {
    pub fn snapshot_at_step(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }
}

struct PathOutput {
    snaps: Vec<Vec<f64>>,
    sups: Vec<f64>,
    sup_sq: f64,
    failed_at: Option<usize>,
    stats: SolverStats,
}

/// Advances `starts.len()` coupled copies under one stream and records them at `steps`.
fn run_group(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    starts: &[&[f64]],
    steps: &[usize],
    mut stream: IncrementStream,
    policy: FailurePolicy,
) -> Result<Vec<PathOutput>> {
    let d = problem.dim();
    let last = steps.iter().copied().max().unwrap_or(0);
    let mut ws = Workspace::new(d);
    let mut states: Vec<Vec<f64>> = starts.iter().map(|s| s.to_vec()).collect();
    let mut outs: Vec<PathOutput> = starts
        .iter()
        .map(|s| PathOutput {
            snaps: vec![Vec::new(); steps.len()],
            sups: vec![0.0; steps.len()],
            sup_sq: s.iter().map(|v| v * v).sum(),
            failed_at: None,
            stats: SolverStats::default(),
        })
        .collect();
    let mut next = vec![0.0; d];
    let record = |outs: &mut [PathOutput], states: &[Vec<f64>], k: usize| {
        for (j, &s) in steps.iter().enumerate() {
            if s == k {
                for (out, st) in outs.iter_mut().zip(states) {
                    out.snaps[j] = st.clone();
                    out.sups[j] = out.sup_sq;
                }
            }
        }
    };
    record(&mut outs, &states, 0);
    for k in 0..last {
        let db = stream.next_increment();
        for (c, state) in states.iter_mut().enumerate() {
            if outs[c].failed_at.is_some() {
                continue;
            }
            match step_into(
                problem,
                scheme,
                state,
                db,
                &mut next,
                &mut ws,
                &mut outs[c].stats,
            ) {
                Ok(()) => {
                    state.copy_from_slice(&next);
                    let sq: f64 = state.iter().map(|v| v * v).sum();
                    outs[c].sup_sq = outs[c].sup_sq.max(sq);
                }
                Err(e) => match policy {
                    FailurePolicy::Abort => return Err(e.at_step(k)),
                    FailurePolicy::Saturate => {
                        state.fill(f64::INFINITY);
                        outs[c].sup_sq = f64::INFINITY;
                        outs[c].failed_at = Some(k);
                    }
                },
            }
        }
        record(&mut outs, &states, k + 1);
    }
    Ok(outs)
}

fn check_steps(steps: &[usize]) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one snapshot is required".into(),
        ));
    }
    Ok(())
}

fn assemble(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    seeding: EnsembleSeeding,
    steps: &[usize],
    n_paths: usize,
    outputs: Vec<PathOutput>,
) -> EnsembleResult {
    let d = problem.dim();
    let mut snapshots: Vec<Snapshot> = steps
        .iter()
        .map(|&s| Snapshot {
            step: s,
            time: s as f64 * scheme.h,
            values: Vec::with_capacity(n_paths * d),
            running_sup_sq: Vec::with_capacity(n_paths),
        })
        .collect();
    let mut stats = SolverStats::default();
    let mut path_sup_sq = Vec::with_capacity(n_paths);
    let mut failed_at = Vec::with_capacity(n_paths);
    for out in outputs {
        for ((snap, v), sup) in snapshots.iter_mut().zip(&out.snaps).zip(&out.sups) {
            snap.values.extend_from_slice(v);
            snap.running_sup_sq.push(*sup);
        }
        stats.merge(&out.stats);
        path_sup_sq.push(out.sup_sq);
        failed_at.push(out.failed_at);
    }
    EnsembleResult {
        dim: d,
        n_paths,
        theta: scheme.theta,
        h: scheme.h,
        base_seed: seeding.base_seed,
        seeds: (0..n_paths).map(|p| seeding.path_seed(p)).collect(),
        snapshots,
        path_sup_sq,
        failed_at,
        solver_stats: stats,
    }
}

/// `n_paths` independent paths from `x0`, recorded at the given step indices.
pub fn simulate_ensemble(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    x0: &[f64],
    n_paths: usize,
    base_seed: u64,
    snapshot_steps: &[usize],
) -> Result<EnsembleResult> {
    simulate_ensemble_with(
        problem,
        scheme,
        x0,
        n_paths,
        base_seed,
        snapshot_steps,
        EnsembleOptions {
            execution: Execution::available(),
            ..EnsembleOptions::default()
        },
    )
}

pub fn simulate_ensemble_with(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    x0: &[f64],
    n_paths: usize,
    base_seed: u64,
    snapshot_steps: &[usize],
    opts: EnsembleOptions,
) -> Result<EnsembleResult> {
    check_start(problem, x0)?;
    check_steps(snapshot_steps)?;
    let seeding = EnsembleSeeding::new(base_seed);
    let outputs = try_map_indexed(n_paths, opts.execution, |p| {
        run_group(
            problem,
            scheme,
            &[x0],
            snapshot_steps,
            seeding.stream(p, scheme.h),
            opts.on_failure,
        )
        .map(|mut v| v.pop().unwrap())
        .map_err(|e| e.at_path(p))
    })?;
    Ok(assemble(
        problem,
        scheme,
        seeding,
        snapshot_steps,
        n_paths,
        outputs,
    ))
}

/// Coupled ensembles: path `p` of both results shares the increments of stream `p`.
pub fn simulate_coupled_ensemble(
    problem: &SdeProblem,
    scheme: &ThetaScheme,
    x0: &[f64],
    y0: &[f64],
    n_paths: usize,
    base_seed: u64,
    snapshot_steps: &[usize],
    opts: EnsembleOptions,
) -> Result<(EnsembleResult, EnsembleResult)> {
    check_start(problem, x0)?;
    check_start(problem, y0)?;
    check_steps(snapshot_steps)?;
    let seeding = EnsembleSeeding::new(base_seed);
    let pairs = try_map_indexed(n_paths, opts.execution, |p| {
        let (stream, _) = seeding.coupled_pair(p, scheme.h);
        run_group(
            problem,
            scheme,
            &[x0, y0],
            snapshot_steps,
            stream,
            opts.on_failure,
        )
        .map(|mut v| {
            let y = v.pop().unwrap();
            let x = v.pop().unwrap();
            (x, y)
        })
        .map_err(|e| e.at_path(p))
    })?;
    let (xs, ys): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((
        assemble(problem, scheme, seeding, snapshot_steps, n_paths, xs),
        assemble(problem, scheme, seeding, snapshot_steps, n_paths, ys),
    ))
}
