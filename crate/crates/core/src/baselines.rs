//! Comparison runners: SGD with the true parameter known, and SGD with the
//! grid maximum-likelihood estimate plugged in.

use crate::engine::{self, DataSource, RunConfig, StageView, Trajectory};
use crate::error::Result;
use crate::grid::ParameterGrid;
use crate::problems::ProblemSpec;

/// Plain projected SGD under `θ^c`. No data are consumed and no posterior is kept.
pub fn run_oracle(problem: &ProblemSpec, config: &RunConfig) -> Result<Trajectory> {
    engine::run_oracle_observed(problem, config, &mut |_| {})
}

pub fn run_oracle_observed(
    problem: &ProblemSpec,
    config: &RunConfig,
    observer: &mut dyn FnMut(&StageView<'_>),
) -> Result<Trajectory> {
    engine::run_oracle_observed(problem, config, observer)
}

/// SGD sampling from `f(·; θ̂_t)` with `θ̂_t` the grid point of largest
/// cumulative likelihood. Rejects decision-dependent problems.
pub fn run_mle(
    problem: &ProblemSpec,
    grid: ParameterGrid,
    config: &RunConfig,
    source: &DataSource,
) -> Result<Trajectory> {
    engine::run_mle_observed(problem, grid, config, source, &mut |_| {})
}

pub fn run_mle_observed(
    problem: &ProblemSpec,
    grid: ParameterGrid,
    config: &RunConfig,
    source: &DataSource,
    observer: &mut dyn FnMut(&StageView<'_>),
) -> Result<Trajectory> {
    engine::run_mle_observed(problem, grid, config, source, observer)
}
