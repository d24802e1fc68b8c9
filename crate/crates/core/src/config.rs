//! JSON run configuration.
//!
//! ```json
//! { "problem": "cubic1d", "experiment": "moment", "theta": 0.0, "h": 0.5, "x0": [3.0] }
//! ```
//!
//! Inline problems give each drift and diffusion component as a list of
//! monomials `coeff * x_1^p_1 * ... * x_d^p_d`, together with their bounds:
//!
//! ```json
//! { "problem": { "name": "linear", "dim": 1,
//!                "drift": [[{ "coeff": -1.0, "powers": [1] }]],
//!                "diffusion": [[{ "coeff": 1.0, "powers": [0] }]] },
//!   "bounds": { "k1": 0.0, "drift_lipschitz": 1.0, "k2": -1.0, "mu": -1.0,
//!               "a": 1e-9, "sigma": 0.0, "b": 1.0 } }
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, CoefficientBounds, SdeProblem};
use crate::stepper::ImplicitSolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Ci,
    Full,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Ci => "ci",
            Profile::Full => "full",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ci" => Ok(Profile::Ci),
            "full" => Ok(Profile::Full),
            other => Err(Error::InvalidParameter(format!(
                "unknown profile `{other}` (expected ci or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Sum of monomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<Monomial>);

impl Polynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|m| {
                m.coeff
                    * m.powers
                        .iter()
                        .zip(x)
                        .map(|(&p, &xi)| xi.powi(p as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// `∂/∂x_j`.
    pub fn derivative(&self, j: usize) -> Polynomial {
        Polynomial(
            self.0
                .iter()
                .filter(|m| m.powers[j] > 0)
                .map(|m| {
                    let mut powers = m.powers.clone();
                    powers[j] -= 1;
                    Monomial {
                        coeff: m.coeff * m.powers[j] as f64,
                        powers,
                    }
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    pub name: String,
    pub dim: usize,
    pub drift: Vec<Polynomial>,
    pub diffusion: Vec<Polynomial>,
}

impl InlineProblem {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if self.drift.len() != self.dim || self.diffusion.len() != self.dim {
            return Err(Error::InvalidParameter(format!(
                "drift and diffusion need {} components each",
                self.dim
            )));
        }
        for poly in self.drift.iter().chain(&self.diffusion) {
            for m in &poly.0 {
                if m.powers.len() != self.dim {
                    return Err(Error::InvalidParameter(format!(
                        "monomial powers {:?} do not match dim {}",
                        m.powers, self.dim
                    )));
                }
                if !m.coeff.is_finite() {
                    return Err(Error::InvalidParameter(
                        "monomial coefficients must be finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SdeProblem> {
        self.validate()?;
        let d = self.dim;
        let drift = Arc::new(self.drift.clone());
        let diffusion = Arc::new(self.diffusion.clone());
        let jac: Arc<Vec<Polynomial>> = Arc::new(
            (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| self.drift[i].derivative(j))
                .collect(),
        );
        let problem = SdeProblem::new(
            self.name.clone(),
            d,
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, p) in out.iter_mut().zip(drift.iter()) {
                    *o = p.eval(x);
                }
            }),
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, p) in out.iter_mut().zip(diffusion.iter()) {
                    *o = p.eval(x);
                }
            }),
        )
        .with_jacobian(Arc::new(move |x: &[f64], out: &mut [f64]| {
            for (o, p) in out.iter_mut().zip(jac.iter()) {
                *o = p.eval(x);
            }
        }));
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Builtin(String),
    Inline(InlineProblem),
}

impl ProblemSpec {
    pub fn label(&self) -> &str {
        match self {
            ProblemSpec::Builtin(name) => name,
            ProblemSpec::Inline(p) => &p.name,
        }
    }
}

pub const EXPERIMENTS: [&str; 7] = [
    "moment",
    "contraction",
    "supmoment",
    "ou",
    "cubic",
    "rate",
    "twod",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemSpec>,
    /// Required for inline problems; overrides the certified bounds of a built-in.
    pub bounds: Option<CoefficientBounds>,
    pub experiment: Option<String>,
    pub theta: Option<f64>,
    pub h: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub output_dir: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    /// Steps between recorded snapshots.
    pub snapshot_every: Option<usize>,
    pub theta_grid: Option<Vec<f64>>,
    pub h_grid: Option<Vec<f64>>,
    /// Final time; an alternative to `n_steps`.
    pub horizon: Option<f64>,
    pub expect_divergence: Option<bool>,
    pub solver: Option<ImplicitSolverConfig>,
    pub condition_samples: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The problem and its bounds. Built-ins default to `ou` when none is given.
    pub fn resolve_problem(&self) -> Result<(SdeProblem, CoefficientBounds)> {
        let spec = self
            .problem
            .clone()
            .unwrap_or(ProblemSpec::Builtin("ou".into()));
        let (problem, bounds) = match &spec {
            ProblemSpec::Builtin(name) => {
                let (p, b) = model::builtin(name)?;
                (p, self.bounds.unwrap_or(b))
            }
            ProblemSpec::Inline(inline) => {
                let bounds = self.bounds.ok_or_else(|| {
                    Error::InvalidParameter("inline problems need `bounds`".into())
                })?;
                (inline.build()?, bounds)
            }
        };
        bounds.validate()?;
        Ok((problem, bounds))
    }

    pub fn problem_label(&self) -> String {
        self.problem
            .as_ref()
            .map_or("ou", ProblemSpec::label)
            .to_string()
    }

    pub fn profile(&self) -> Profile {
        self.profile.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_by_name() {
        let cfg =
            RunConfig::from_json(r#"{"problem": "cubic2d", "theta": 1.0, "h": 0.1, "seed": 3}"#)
                .unwrap();
        let (p, b) = cfg.resolve_problem().unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(b.k2, -4.0);
        assert_eq!(cfg.seed(), 3);
        assert_eq!(cfg.profile(), Profile::Ci);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"problem": "ou", "tehta": 1.0}"#).is_err());
        assert!(RunConfig::from_json("{not json").is_err());
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        let cfg = RunConfig::from_json(r#"{"problem": "quintic"}"#).unwrap();
        assert!(matches!(
            cfg.resolve_problem(),
            Err(Error::UnknownProblem(_))
        ));
    }

    #[test]
    fn inline_polynomial_problem() {
        let text = r#"{
            "problem": { "name": "cubic", "dim": 1,
                         "drift": [[{"coeff": -0.5, "powers": [1]}, {"coeff": -0.5, "powers": [3]}]],
                         "diffusion": [[{"coeff": 1.0, "powers": [0]}]] },
            "bounds": { "k1": 0.0, "k2": -0.5, "mu": -0.5, "a": 1e-12, "sigma": 0.0, "b": 1.0 }
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let (p, b) = cfg.resolve_problem().unwrap();
        let (reference, _) = model::builtin("cubic1d").unwrap();
        for x in [-2.0, 0.3, 4.0] {
            assert_eq!(p.drift(&[x]).unwrap(), reference.drift(&[x]).unwrap());
        }
        let mut jac = [0.0];
        assert!(p.drift_jacobian_into(&[2.0], &mut jac));
        assert_eq!(jac[0], -0.5 - 1.5 * 4.0);
        assert!(b.drift_lipschitz.is_none());
        assert_eq!(cfg.problem_label(), "cubic");
    }

    #[test]
    fn inline_needs_bounds_and_consistent_shapes() {
        let no_bounds = r#"{"problem": {"name": "z", "dim": 1, "drift": [[]], "diffusion": [[]]}}"#;
        assert!(RunConfig::from_json(no_bounds)
            .unwrap()
            .resolve_problem()
            .is_err());
        let bad_powers = r#"{"problem": {"name": "z", "dim": 2, "drift": [[{"coeff": 1, "powers": [1]}], []],
            "diffusion": [[], []]}, "bounds": {"k1": 0, "k2": -1, "mu": -1, "a": 1, "sigma": 0, "b": 1}}"#;
        assert!(RunConfig::from_json(bad_powers)
            .unwrap()
            .resolve_problem()
            .is_err());
    }

    #[test]
    fn profile_parsing() {
        assert_eq!("full".parse::<Profile>().unwrap(), Profile::Full);
        assert!("huge".parse::<Profile>().is_err());
    }
}
