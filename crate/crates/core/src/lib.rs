//! Particle simulation of neutral stochastic McKean-Vlasov equations with
//! several discrete delays, using a tamed Euler-Maruyama scheme.
//!
//! - [`model`]: coefficient interface and built-in models
//! - [`grid`]: exact delay-aligned time grids
//! - [`noise`]: counter-based Brownian increments with multi-resolution coupling
//! - [`measure`]: empirical measures and Wasserstein distances
//! - [`engine`]: the interacting-particle stepper
//! - [`experiments`]: convergence, chaos, moment and mean-field harnesses

pub mod engine;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod measure;
pub mod model;
pub mod noise;

pub use engine::{simulate, tame_drift, NoiseSource, ParticleEnsemble, SimOptions, TamingConfig, Trajectory};
pub use error::{Error, Result};
pub use experiments::{fit_slope, ExperimentKind, ExperimentReport, Record, SlopeFit};
pub use grid::{parse_rational, Rational, TimeGrid};
pub use measure::EmpiricalView;
pub use model::{builtin, ModelSpec};
