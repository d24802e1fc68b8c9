//! Stochastic theta method for dissipative Itô SDEs, with tools to measure how
//! close the numerical stationary law is to the true one.
//!
//! ```
//! use theta_stationary::{model, noise::IncrementStream, stepper};
//!
//! let (ou, _) = model::builtin("ou").unwrap();
//! let scheme = model::ThetaScheme::new(0.5, 0.01).unwrap();
//! let path = stepper::simulate_path(&ou, &scheme, &[2.0], 100, IncrementStream::new(7, 0.01)).unwrap();
//! assert_eq!(path.states.len(), 101);
//! ```

#![allow(
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::excessive_precision
)]

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod experiments;
pub mod model;
pub mod noise;
pub mod parallel;
pub mod stationary;
pub mod stepper;

pub use error::{Error, Result};
pub use model::{builtin, CoefficientBounds, SdeProblem, ThetaScheme};
pub use stepper::{simulate_ensemble, simulate_path, ImplicitSolverConfig};
