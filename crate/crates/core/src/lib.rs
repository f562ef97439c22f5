//! Bayesian-SGD: joint Bayesian estimation of an unknown distribution
//! parameter on a finite grid and projected stochastic gradient descent on
//! the posterior-averaged objective, for streaming data that may depend on
//! the current decision.

pub mod baselines;
pub mod dist;
pub mod engine;
pub mod error;
pub mod grid;
pub mod harness;
pub mod problems;
pub mod quad;
pub mod replay;
pub mod schedule;
pub mod validators;

pub use dist::{DecisionMap, DensityFamily, FamilyKind, ParamPoint};
pub use error::{Error, Result};
pub use grid::{Divergence, GridSpec, ParameterGrid};
pub use problems::{BoxBounds, Mode, ProblemSpec};
pub use engine::{Algorithm, DataSource, RunConfig, StageRecord, Trajectory};
pub use schedule::StepSchedule;
