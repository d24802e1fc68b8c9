//! SDE problems `dx = f(x) dt + g(x) dB`, their coefficient constants, and the
//! step-size regimes those constants certify.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stepper::ImplicitSolverConfig;

/// `out = F(x)` for a map `R^d -> R^d`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Row-major `d x d` Jacobian of the drift.
pub type JacobianField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Closed-form stationary law attached to a built-in problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StationaryLaw {
    Normal {
        mean: f64,
        variance: f64,
    },
    /// Density proportional to `exp(-x^2/2 - x^4/4)`.
    QuarticGibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub alpha: f64,
    pub sigma: f64,
}

impl OuParams {
    /// Mean of the theta-scheme iterate after `k` steps from `x0`.
    pub fn scheme_mean(&self, theta: f64, h: f64, x0: f64, k: usize) -> f64 {
        self.scheme_factor(theta, h).powi(k as i32) * x0
    }

    /// `(1 - (1-θ)αh) / (1 + θαh)`, i.e. `1 - αh/(1+αθh)`.
    pub fn scheme_factor(&self, theta: f64, h: f64) -> f64 {
        (1.0 - (1.0 - theta) * self.alpha * h) / (1.0 + theta * self.alpha * h)
    }

    /// Variance of the iterate after `k` steps from a deterministic start.
    pub fn scheme_variance(&self, theta: f64, h: f64, k: usize) -> f64 {
        let q = self.scheme_factor(theta, h);
        self.scheme_stationary_variance(theta, h) * (1.0 - q.powi(2 * k as i32))
    }

    /// `σ² / (2α − α²h + 2α²θh)`.
    pub fn scheme_stationary_variance(&self, theta: f64, h: f64) -> f64 {
        let a = self.alpha;
        self.sigma * self.sigma / (2.0 * a - a * a * h + 2.0 * a * a * theta * h)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInfo {
    pub stationary: Option<StationaryLaw>,
    pub ou_params: Option<OuParams>,
}

/// Coefficients of a `dim`-dimensional Itô SDE driven by one scalar Brownian motion.
#[derive(Clone)]
pub struct SdeProblem {
    name: String,
    dim: usize,
    drift: VectorField,
    diffusion: VectorField,
    drift_jacobian: Option<JacobianField>,
    analytic: Option<AnalyticInfo>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.drift_jacobian.is_some())
            .field("analytic", &self.analytic)
            .finish()
    }
}

impl SdeProblem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: VectorField,
        diffusion: VectorField,
    ) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self {
            name: name.into(),
            dim,
            drift,
            diffusion,
            drift_jacobian: None,
            analytic: None,
        }
    }

    /// Scalar problem from plain closures.
    pub fn scalar(
        name: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            name,
            1,
            Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = drift(x[0])),
            Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = diffusion(x[0])),
        )
    }

    pub fn with_jacobian(mut self, jacobian: JacobianField) -> Self {
        self.drift_jacobian = Some(jacobian);
        self
    }

    pub fn with_analytic(mut self, analytic: AnalyticInfo) -> Self {
        self.analytic = Some(analytic);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn analytic(&self) -> Option<&AnalyticInfo> {
        self.analytic.as_ref()
    }

    pub fn ou_params(&self) -> Option<OuParams> {
        self.analytic.as_ref().and_then(|a| a.ou_params)
    }

    pub fn stationary_law(&self) -> Option<StationaryLaw> {
        self.analytic.as_ref().and_then(|a| a.stationary)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.drift_jacobian.is_some()
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.drift)(x, out);
        check_finite("drift", x, out)
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.diffusion)(x, out);
        check_finite("diffusion", x, out)
    }

    /// Analytic drift Jacobian, if one was supplied. Returns `false` otherwise.
    pub fn drift_jacobian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.drift_jacobian {
            Some(jac) => {
                jac(x, out);
                true
            }
            None => false,
        }
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.diffusion_into(x, &mut out)?;
        Ok(out)
    }
}

fn check_finite(what: &'static str, x: &[f64], out: &[f64]) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what,
            point: x.to_vec(),
        })
    }
}

/// Linear growth bound `|f(x)|² ≤ κ|x|² + c` on the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftGrowth {
    pub kappa: f64,
    pub c: f64,
}

/// The constants of the standing assumptions on `f` and `g`.
///
/// * `k1`: `|g(x) − g(y)|² ≤ k1 |x − y|²`
/// * `drift_lipschitz`: `|f(x) − f(y)|² ≤ L |x − y|²`, present only when the drift
///   is globally Lipschitz (needed for `θ < 1/2`)
/// * `k2 < 0`: `⟨x − y, f(x) − f(y)⟩ ≤ k2 |x − y|²`
/// * `mu < 0, a > 0`: `⟨x, f(x)⟩ ≤ mu |x|² + a`
/// * `sigma ≥ 0, b > 0`: `|g(x)|² ≤ sigma |x|² + b`
/// * `drift_growth`: `|f(x)|² ≤ kappa |x|² + c`, absent for super-linear drifts
///
/// plus `2 k2 + k1 < 0` and `2 mu + sigma < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBounds {
    pub k1: f64,
    #[serde(default)]
    pub drift_lipschitz: Option<f64>,
    pub k2: f64,
    pub mu: f64,
    pub a: f64,
    pub sigma: f64,
    pub b: f64,
    #[serde(default)]
    pub drift_growth: Option<DriftGrowth>,
}

/// Smallest offset stored for `a`, `b`, `c` when the exact inequality has a zero offset.
pub const TIGHT_OFFSET: f64 = f64::EPSILON;

impl CoefficientBounds {
    pub fn drift_globally_lipschitz(&self) -> bool {
        self.drift_lipschitz.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::ConstraintViolation {
                    constraint: name,
                    detail: format!("got {v}"),
                })
            }
        };
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::ConstraintViolation {
                    constraint: name,
                    detail: format!("got {v}"),
                })
            }
        };
        nonneg("k1 >= 0", self.k1)?;
        if let Some(l) = self.drift_lipschitz {
            nonneg("drift_lipschitz >= 0", l)?;
        }
        positive("k2 < 0", -self.k2)?;
        positive("mu < 0", -self.mu)?;
        positive("a > 0", self.a)?;
        nonneg("sigma >= 0", self.sigma)?;
        positive("b > 0", self.b)?;
        if let Some(g) = self.drift_growth {
            nonneg("kappa >= 0", g.kappa)?;
            positive("c > 0", g.c)?;
        }
        if 2.0 * self.k2 + self.k1 >= 0.0 {
            return Err(Error::ConstraintViolation {
                constraint: "2*k2 + k1 < 0",
                detail: format!(
                    "2*({}) + {} = {}",
                    self.k2,
                    self.k1,
                    2.0 * self.k2 + self.k1
                ),
            });
        }
        if 2.0 * self.mu + self.sigma >= 0.0 {
            return Err(Error::ConstraintViolation {
                constraint: "2*mu + sigma < 0",
                detail: format!(
                    "2*({}) + {} = {}",
                    self.mu,
                    self.sigma,
                    2.0 * self.mu + self.sigma
                ),
            });
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self> {
        self.validate().map(|_| self)
    }
}

/// θ and step size of the stochastic theta method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaScheme {
    pub theta: f64,
    pub h: f64,
    #[serde(default)]
    pub solver: ImplicitSolverConfig,
}

impl ThetaScheme {
    pub fn new(theta: f64, h: f64) -> Result<Self> {
        Self::with_solver(theta, h, ImplicitSolverConfig::default())
    }

    pub fn with_solver(theta: f64, h: f64, solver: ImplicitSolverConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {theta} not in [0, 1]"
            )));
        }
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "h = {h} must be finite and >= 0"
            )));
        }
        solver.validate()?;
        Ok(Self { theta, h, solver })
    }

    /// `θ h k2 < 1`, which makes `x ↦ x − θ h f(x)` invertible.
    pub fn well_posed_for(&self, bounds: &CoefficientBounds) -> bool {
        self.theta * self.h * bounds.k2 < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    ThetaBelowHalf,
    ThetaAtLeastHalf,
}

impl Regime {
    pub fn of(theta: f64) -> Self {
        if theta < 0.5 {
            Regime::ThetaBelowHalf
        } else {
            Regime::ThetaAtLeastHalf
        }
    }
}

/// Largest admissible step sizes (exclusive) for the moment and contraction estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLimits {
    #[serde(with = "extended_float")]
    pub moment: f64,
    #[serde(with = "extended_float")]
    pub contraction: f64,
}

/// `−(2μ + σ) / ((1−θ)² κ)`; `∞` when `κ = 0`.
pub fn moment_step_limit(theta: f64, mu: f64, sigma: f64, kappa: f64) -> f64 {
    let denom = (1.0 - theta).powi(2) * kappa;
    if denom == 0.0 {
        f64::INFINITY
    } else {
        -(2.0 * mu + sigma) / denom
    }
}

/// `−(2k2 + k1) / ((1−θ)² L)`, with `k1` the diffusion constant and `L` the
/// drift Lipschitz constant; `∞` when `L = 0`. With `k1 = L` this is the usual
/// single-constant bound.
pub fn contraction_step_limit(theta: f64, k1: f64, k2: f64, drift_lipschitz: f64) -> f64 {
    let denom = (1.0 - theta).powi(2) * drift_lipschitz;
    if denom == 0.0 {
        f64::INFINITY
    } else {
        -(2.0 * k2 + k1) / denom
    }
}

/// Step limits for `θ`. For `θ ≥ 1/2` there is no restriction. Below one half,
/// a missing growth or Lipschitz bound on the drift leaves no certified step (`0`).
pub fn max_stable_step(theta: f64, bounds: &CoefficientBounds) -> Result<StepLimits> {
    bounds.validate()?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter(format!(
            "theta = {theta} not in [0, 1]"
        )));
    }
    if theta >= 0.5 {
        return Ok(StepLimits {
            moment: f64::INFINITY,
            contraction: f64::INFINITY,
        });
    }
    let moment = match bounds.drift_growth {
        Some(g) => moment_step_limit(theta, bounds.mu, bounds.sigma, g.kappa),
        None => 0.0,
    };
    let contraction = match bounds.drift_lipschitz {
        Some(l) => contraction_step_limit(theta, bounds.k1, bounds.k2, l),
        None => 0.0,
    };
    Ok(StepLimits {
        moment,
        contraction,
    })
}

/// Per-step mean-square growth factor for `θ < 1/2`:
/// `(1 + (1−θ)²h²κ + hσ + 2(1−θ)hμ) / (1 − 2μθh)`.
pub fn moment_factor(theta: f64, h: f64, mu: f64, sigma: f64, kappa: f64) -> f64 {
    let omt = 1.0 - theta;
    (1.0 + omt * omt * h * h * kappa + h * sigma + 2.0 * omt * h * mu)
        / (1.0 - 2.0 * mu * theta * h)
}

/// Per-step mean-square contraction factor for `θ < 1/2`:
/// `(1 + (1−θ)²h²L + hk1 + 2k2(1−θ)h) / (1 − 2k2θh)`.
pub fn contraction_factor(theta: f64, h: f64, k1: f64, k2: f64, drift_lipschitz: f64) -> f64 {
    let omt = 1.0 - theta;
    (1.0 + omt * omt * h * h * drift_lipschitz + h * k1 + 2.0 * k2 * omt * h)
        / (1.0 - 2.0 * k2 * theta * h)
}

/// Quantities of the `θ ≥ 1/2` moment and contraction estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperRegimeParams {
    /// `1 + σ/(4μ)`
    pub theta_star: f64,
    /// `min((2μ+σ)/(2μ), 2θ−1)`
    pub lambda: f64,
    /// `(1 − μ(1−θ)h) / (1 − μ(1−θ+λ)h)`
    pub n_h: f64,
    /// `4(1−θ) + σ + 2 N_h μ (2θ−1−λ)`
    pub psi: f64,
    /// `1 + k1/(4 k2)`
    pub theta_star_contraction: f64,
    /// `min((2k2+k1)/(2k2), 2θ−1)`
    pub lambda_contraction: f64,
    /// `((1 − k2(1−θ)h) / (1 − k2(1−θ+λ')h))²`
    pub l_h: f64,
    /// `4(1−θ)k2 + k1 + 2(2θ−1−λ')k2 L_h`
    pub phi: f64,
}

pub fn upper_regime_params(theta: f64, h: f64, bounds: &CoefficientBounds) -> UpperRegimeParams {
    let (mu, sigma, k1, k2) = (bounds.mu, bounds.sigma, bounds.k1, bounds.k2);
    let theta_star = 1.0 + sigma / (4.0 * mu);
    let lambda = ((2.0 * mu + sigma) / (2.0 * mu)).min(2.0 * theta - 1.0);
    let n_h = (1.0 - mu * (1.0 - theta) * h) / (1.0 - mu * (1.0 - theta + lambda) * h);
    let psi = 4.0 * (1.0 - theta) + sigma + 2.0 * n_h * mu * (2.0 * theta - 1.0 - lambda);
    let theta_star_contraction = 1.0 + k1 / (4.0 * k2);
    let lambda_contraction = ((2.0 * k2 + k1) / (2.0 * k2)).min(2.0 * theta - 1.0);
    let l_h = ((1.0 - k2 * (1.0 - theta) * h)
        / (1.0 - k2 * (1.0 - theta + lambda_contraction) * h))
        .powi(2);
    let phi =
        4.0 * (1.0 - theta) * k2 + k1 + 2.0 * (2.0 * theta - 1.0 - lambda_contraction) * k2 * l_h;
    UpperRegimeParams {
        theta_star,
        lambda,
        n_h,
        psi,
        theta_star_contraction,
        lambda_contraction,
        l_h,
        phi,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub theta: f64,
    pub h: f64,
    pub regime: Regime,
    #[serde(with = "extended_float")]
    pub h_max_moment: f64,
    #[serde(with = "extended_float")]
    pub h_max_contraction: f64,
    pub theta_star: Option<f64>,
    pub lambda: Option<f64>,
    pub upper: Option<UpperRegimeParams>,
    pub valid: bool,
    pub reasons: Vec<String>,
}

/// Diagnoses whether `(θ, h)` is covered by the moment and contraction estimates.
pub fn regime_report(scheme: &ThetaScheme, bounds: &CoefficientBounds) -> RegimeReport {
    let (theta, h) = (scheme.theta, scheme.h);
    let regime = Regime::of(theta);
    let mut reasons = Vec::new();
    let mut report = RegimeReport {
        theta,
        h,
        regime,
        h_max_moment: f64::NAN,
        h_max_contraction: f64::NAN,
        theta_star: None,
        lambda: None,
        upper: None,
        valid: false,
        reasons: Vec::new(),
    };
    let limits = match max_stable_step(theta, bounds) {
        Ok(l) => l,
        Err(e) => {
            report.reasons.push(e.to_string());
            return report;
        }
    };
    report.h_max_moment = limits.moment;
    report.h_max_contraction = limits.contraction;
    if !scheme.well_posed_for(bounds) {
        reasons.push(format!(
            "implicit map not invertible: theta*h*k2 = {} >= 1",
            theta * h * bounds.k2
        ));
    }
    match regime {
        Regime::ThetaBelowHalf => {
            if bounds.drift_growth.is_none() {
                reasons.push(
                    "theta < 1/2 needs a linear growth bound |f(x)|^2 <= kappa|x|^2 + c on the drift".into(),
                );
            } else if h >= limits.moment {
                reasons.push(format!(
                    "h = {h} violates the mean-square moment bound h < -(2mu+sigma)/((1-theta)^2 kappa) = {}",
                    limits.moment
                ));
            }
            if bounds.drift_lipschitz.is_none() {
                reasons.push("theta < 1/2 needs a globally Lipschitz drift".into());
            } else if h >= limits.contraction {
                reasons.push(format!(
                    "h = {h} violates the contraction bound h < -(2k2+k1)/((1-theta)^2 L) = {}",
                    limits.contraction
                ));
            }
        }
        Regime::ThetaAtLeastHalf => {
            let upper = upper_regime_params(theta, h, bounds);
            report.theta_star = Some(upper.theta_star);
            report.lambda = Some(upper.lambda);
            report.upper = Some(upper);
        }
    }
    report.valid = reasons.is_empty();
    report.reasons = reasons;
    report
}

/// Uniform points in the box `[lo, hi]^d`, plus nonnegative scalar parameters in `[0, param_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSampler {
    pub lo: f64,
    pub hi: f64,
    pub param_max: f64,
    pub seed: u64,
}

impl Default for PointSampler {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            param_max: 2.0,
            seed: 0x5eed,
        }
    }
}

impl PointSampler {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn point(&self, rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|_| rng.random_range(self.lo..=self.hi))
            .collect()
    }

    /// Ordered pair `0 ≤ p1 ≤ p2 ≤ param_max`.
    fn ordered_params(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let u: f64 = rng.random_range(0.0..=self.param_max);
        let v: f64 = rng.random_range(0.0..=self.param_max);
        (u.min(v), u.max(v))
    }
}

/// Relative tolerance for sampled condition checks.
pub const CONDITION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub applicable: bool,
    /// Claimed constant (pair conditions) or `0` (point conditions, measured as excess).
    pub bound: f64,
    /// Largest observed ratio (pair conditions) or relative excess `lhs − rhs` (point conditions).
    pub worst: f64,
    /// Smallest observed ratio; only meaningful for pair conditions.
    pub best: f64,
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
}

impl ConditionCheck {
    fn pair(name: &str, bound: f64, applicable: bool) -> Self {
        Self {
            name: name.to_string(),
            applicable,
            bound,
            worst: f64::NEG_INFINITY,
            best: f64::INFINITY,
            passed: true,
            witness: None,
        }
    }

    fn point(name: &str, applicable: bool) -> Self {
        Self::pair(name, 0.0, applicable)
    }

    fn observe_ratio(&mut self, ratio: f64, witness: impl FnOnce() -> Vec<f64>) {
        if !self.applicable {
            return;
        }
        self.best = self.best.min(ratio);
        if ratio > self.worst {
            self.worst = ratio;
            let tol = CONDITION_TOLERANCE * self.bound.abs().max(ratio.abs()).max(1.0);
            if ratio > self.bound + tol {
                self.passed = false;
                self.witness = Some(witness());
            }
        }
    }

    fn observe_excess(&mut self, lhs: f64, rhs: f64, witness: impl FnOnce() -> Vec<f64>) {
        if !self.applicable {
            return;
        }
        let rel = (lhs - rhs) / lhs.abs().max(rhs.abs()).max(1.0);
        self.best = self.best.min(rel);
        if rel > self.worst {
            self.worst = rel;
            if rel > CONDITION_TOLERANCE {
                self.passed = false;
                self.witness = Some(witness());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub samples: usize,
    pub checks: Vec<ConditionCheck>,
    pub pass: bool,
}

impl ConditionReport {
    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Tries to falsify the coefficient bounds on `n` random point pairs.
pub fn check_conditions_sampled(
    problem: &SdeProblem,
    bounds: &CoefficientBounds,
    sampler: &PointSampler,
    n: usize,
) -> Result<ConditionReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let d = problem.dim();
    let mut lip_f = ConditionCheck::pair(
        "drift_lipschitz",
        bounds.drift_lipschitz.unwrap_or(f64::NAN),
        bounds.drift_lipschitz.is_some(),
    );
    let mut lip_g = ConditionCheck::pair("diffusion_lipschitz", bounds.k1, true);
    let mut one_sided = ConditionCheck::pair("one_sided_lipschitz", bounds.k2, true);
    let mut combined =
        ConditionCheck::pair("combined_2k2_plus_k1", 2.0 * bounds.k2 + bounds.k1, true);
    let mut dissipative = ConditionCheck::point("dissipativity", true);
    let mut g_growth = ConditionCheck::point("diffusion_growth", true);
    let mut f_growth = ConditionCheck::point("drift_growth", bounds.drift_growth.is_some());

    let mut rng = sampler.rng();
    for _ in 0..n {
        let x = sampler.point(&mut rng, d);
        let y = sampler.point(&mut rng, d);
        let (fx, fy) = (problem.drift(&x)?, problem.drift(&y)?);
        let (gx, gy) = (problem.diffusion(&x)?, problem.diffusion(&y)?);
        let dx = diff(&x, &y);
        let dist_sq = norm_sq(&dx);
        if dist_sq > 0.0 {
            let df = diff(&fx, &fy);
            let dg = diff(&gx, &gy);
            let witness = || concat(&[&x, &y]);
            lip_f.observe_ratio(norm_sq(&df) / dist_sq, witness);
            let g_ratio = norm_sq(&dg) / dist_sq;
            lip_g.observe_ratio(g_ratio, witness);
            let os_ratio = dot(&dx, &df) / dist_sq;
            one_sided.observe_ratio(os_ratio, witness);
            combined.observe_ratio(2.0 * os_ratio + g_ratio, witness);
        }
        for (p, fp, gp) in [(&x, &fx, &gx), (&y, &fy, &gy)] {
            let r2 = norm_sq(p);
            dissipative.observe_excess(dot(p, fp), bounds.mu * r2 + bounds.a, || p.clone());
            g_growth.observe_excess(norm_sq(gp), bounds.sigma * r2 + bounds.b, || p.clone());
            if let Some(g) = bounds.drift_growth {
                f_growth.observe_excess(norm_sq(fp), g.kappa * r2 + g.c, || p.clone());
            }
        }
    }
    let checks = vec![
        lip_f,
        lip_g,
        one_sided,
        combined,
        dissipative,
        g_growth,
        f_growth,
    ];
    let pass = checks.iter().all(|c| c.passed);
    Ok(ConditionReport {
        samples: n,
        checks,
        pass,
    })
}

/// Tolerance on the relative slack of the auxiliary inequalities.
pub const AUXILIARY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryWitness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p1: f64,
    pub p2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryReport {
    pub samples: usize,
    /// Smallest relative slack `(rhs − lhs) / max(1, |rhs|)` of the dissipativity-weighted inequality.
    pub worst_slack_dissipative: f64,
    /// Same for the one-sided-Lipschitz-weighted inequality.
    pub worst_slack_monotone: f64,
    pub passed: bool,
    pub witness: Option<AuxiliaryWitness>,
}

/// `|x − β1 f(x)|² + 2β1 a ≤ (1−μβ1)/(1−μβ2) (|x − β2 f(x)|² + 2β2 a)`, returns `(lhs, rhs)`.
pub fn dissipative_weighted_sides(
    fx_x: (&[f64], &[f64]),
    beta1: f64,
    beta2: f64,
    mu: f64,
    a: f64,
) -> (f64, f64) {
    let (x, fx) = fx_x;
    let shifted = |beta: f64| -> f64 {
        x.iter()
            .zip(fx)
            .map(|(xi, fi)| (xi - beta * fi).powi(2))
            .sum::<f64>()
    };
    let lhs = shifted(beta1) + 2.0 * beta1 * a;
    let rhs = (1.0 - mu * beta1) / (1.0 - mu * beta2) * (shifted(beta2) + 2.0 * beta2 * a);
    (lhs, rhs)
}

/// `|Δ − λ1 Δf| ≤ (1−k2λ1)/(1−k2λ2) |Δ − λ2 Δf|`, returns `(lhs, rhs)`.
pub fn monotone_weighted_sides(
    dx: &[f64],
    df: &[f64],
    lambda1: f64,
    lambda2: f64,
    k2: f64,
) -> (f64, f64) {
    let shifted = |lam: f64| -> f64 {
        dx.iter()
            .zip(df)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let lhs = shifted(lambda1);
    let rhs = (1.0 - k2 * lambda1) / (1.0 - k2 * lambda2) * shifted(lambda2);
    (lhs, rhs)
}

/// Checks the two weighted resolvent inequalities used by the `θ ≥ 1/2` estimates.
pub fn verify_auxiliary_inequalities(
    problem: &SdeProblem,
    bounds: &CoefficientBounds,
    sampler: &PointSampler,
    n: usize,
) -> Result<AuxiliaryReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let d = problem.dim();
    let mut rng = sampler.rng();
    let mut report = AuxiliaryReport {
        samples: n,
        worst_slack_dissipative: f64::INFINITY,
        worst_slack_monotone: f64::INFINITY,
        passed: true,
        witness: None,
    };
    let rel = |lhs: f64, rhs: f64| (rhs - lhs) / rhs.abs().max(1.0);
    for _ in 0..n {
        let x = sampler.point(&mut rng, d);
        let y = sampler.point(&mut rng, d);
        let (beta1, beta2) = sampler.ordered_params(&mut rng);
        let (lam1, lam2) = sampler.ordered_params(&mut rng);
        let fx = problem.drift(&x)?;
        let fy = problem.drift(&y)?;

        let (lhs, rhs) = dissipative_weighted_sides((&x, &fx), beta1, beta2, bounds.mu, bounds.a);
        let slack = rel(lhs, rhs);
        if slack < report.worst_slack_dissipative {
            report.worst_slack_dissipative = slack;
            if slack < -AUXILIARY_TOLERANCE {
                report.passed = false;
                report.witness = Some(AuxiliaryWitness {
                    x: x.clone(),
                    y: Vec::new(),
                    p1: beta1,
                    p2: beta2,
                });
            }
        }

        let (lhs, rhs) =
            monotone_weighted_sides(&diff(&x, &y), &diff(&fx, &fy), lam1, lam2, bounds.k2);
        let slack = rel(lhs, rhs);
        if slack < report.worst_slack_monotone {
            report.worst_slack_monotone = slack;
            if slack < -AUXILIARY_TOLERANCE {
                report.passed = false;
                report.witness = Some(AuxiliaryWitness {
                    x: x.clone(),
                    y: y.clone(),
                    p1: lam1,
                    p2: lam2,
                });
            }
        }
    }
    Ok(report)
}

pub const BUILTIN_NAMES: [&str; 3] = ["ou", "cubic1d", "cubic2d"];

/// Built-in example problems with certified coefficient bounds.
pub fn builtin(name: &str) -> Result<(SdeProblem, CoefficientBounds)> {
    match name {
        "ou" => Ok(ou(2.0, 2.0)),
        "cubic1d" => Ok(cubic1d()),
        "cubic2d" => Ok(cubic2d()),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// `dx = −αx dt + σ dB`.
pub fn ou(alpha: f64, sigma: f64) -> (SdeProblem, CoefficientBounds) {
    assert!(alpha > 0.0, "alpha must be positive");
    let problem = SdeProblem::new(
        "ou",
        1,
        Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = -alpha * x[0]),
        Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = sigma),
    )
    .with_jacobian(Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = -alpha))
    .with_analytic(AnalyticInfo {
        stationary: Some(StationaryLaw::Normal {
            mean: 0.0,
            variance: sigma * sigma / (2.0 * alpha),
        }),
        ou_params: Some(OuParams { alpha, sigma }),
    });
    let bounds = CoefficientBounds {
        k1: 0.0,
        drift_lipschitz: Some(alpha * alpha),
        k2: -alpha,
        mu: -alpha,
        a: TIGHT_OFFSET,
        sigma: 0.0,
        b: (sigma * sigma).max(TIGHT_OFFSET),
        drift_growth: Some(DriftGrowth {
            kappa: alpha * alpha,
            c: TIGHT_OFFSET,
        }),
    };
    (problem, bounds)
}

/// `dx = −0.5(x + x³) dt + dB`.
pub fn cubic1d() -> (SdeProblem, CoefficientBounds) {
    let problem = SdeProblem::new(
        "cubic1d",
        1,
        Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -0.5 * (x[0] + x[0] * x[0] * x[0])),
        Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 1.0),
    )
    .with_jacobian(Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = -0.5 * (1.0 + 3.0 * x[0] * x[0])
    }))
    .with_analytic(AnalyticInfo {
        stationary: Some(StationaryLaw::QuarticGibbs),
        ou_params: None,
    });
    // f'(x) = −0.5(1 + 3x²) ≤ −0.5 and ⟨x, f(x)⟩ = −0.5x² − 0.5x⁴.
    let bounds = CoefficientBounds {
        k1: 0.0,
        drift_lipschitz: None,
        k2: -0.5,
        mu: -0.5,
        a: TIGHT_OFFSET,
        sigma: 0.0,
        b: 1.0,
        drift_growth: None,
    };
    (problem, bounds)
}

/// Two-dimensional cubic system with affine multiplicative noise.
pub fn cubic2d() -> (SdeProblem, CoefficientBounds) {
    let problem = SdeProblem::new(
        "cubic2d",
        2,
        Arc::new(|x: &[f64], out: &mut [f64]| {
            let (x1, x2) = (x[0], x[1]);
            out[0] = -x1 * x1 * x1 - 5.0 * x1 + x2 + 5.0;
            out[1] = -x2 * x2 * x2 - x1 - 5.0 * x2 + 5.0;
        }),
        Arc::new(|x: &[f64], out: &mut [f64]| {
            let (x1, x2) = (x[0], x[1]);
            out[0] = x1 - x2 + 3.0;
            out[1] = -x1 - x2 + 3.0;
        }),
    )
    .with_jacobian(Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = -3.0 * x[0] * x[0] - 5.0;
        out[1] = 1.0;
        out[2] = -1.0;
        out[3] = -3.0 * x[1] * x[1] - 5.0;
    }));
    // ⟨x, f(x)⟩ = −x1⁴ − x2⁴ − 5|x|² + 5(x1 + x2) ≤ −4|x|² + 12.5
    // |g(x)|² = 2|x|² − 12 x2 + 18 ≤ 3|x|² + 54
    let bounds = CoefficientBounds {
        k1: 2.0,
        drift_lipschitz: None,
        k2: -4.0,
        mu: -4.0,
        a: 12.5,
        sigma: 3.0,
        b: 54.0,
        drift_growth: None,
    };
    (problem, bounds)
}

/// Serializes `±∞` and NaN as strings so JSON stays valid.
pub(crate) mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "NaN" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}
