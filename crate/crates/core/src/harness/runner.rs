//! Replication runner and cross-replication aggregation.

use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;

use crate::baselines;
use crate::engine::{self, Algorithm, DataSource, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, GridSupport, ParameterGrid};
use crate::harness::config::ExperimentConfig;
use crate::problems::{Mode, ProblemSpec};
use crate::replay::ReplayStream;

/// Streaming mean and population variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    pub fn std(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.m2 / self.n as f64).max(0.0).sqrt())
    }
}

/// One CSV row. `None` cells are written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub t: usize,
    pub mean_err: Option<f64>,
    pub std_err: Option<f64>,
    pub mean_mass_true: Option<f64>,
    /// `1.96·std/√R` for `π_t(θ^c)`.
    pub ci_mass_true: Option<f64>,
    pub mean_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationStats {
    pub problem: String,
    pub algorithm: Algorithm,
    /// Replications that completed and were aggregated.
    pub replications: usize,
    pub aborted: usize,
    pub stages: Vec<StageStats>,
    /// Mean and std of `‖x_{T+1} - x*‖₂`.
    pub final_err: Option<(f64, f64)>,
    pub max_grad_norm: f64,
}

/// Per-stage statistics over completed trajectories, reduced in the given order.
pub fn aggregate(problem: &ProblemSpec, algorithm: Algorithm, runs: &[Trajectory], aborted: usize) -> ReplicationStats {
    let horizon = runs.first().map_or(0, Trajectory::horizon);
    let r = runs.len() as f64;
    let mut stages = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let (mut err, mut mass, mut dt) = (Welford::default(), Welford::default(), Welford::default());
        for run in runs {
            let s = &run.stages[i];
            if let Some(v) = s.error {
                err.push(v);
            }
            if let Some(v) = s.mass_true {
                mass.push(v);
            }
            if let Some(v) = s.d_t {
                dt.push(v);
            }
        }
        stages.push(StageStats {
            t: i + 1,
            mean_err: err.mean(),
            std_err: err.std(),
            mean_mass_true: mass.mean(),
            ci_mass_true: mass.std().map(|s| 1.96 * s / r.sqrt()),
            mean_dt: dt.mean(),
        });
    }
    let final_err = problem.x_star.as_ref().and_then(|xs| {
        let mut w = Welford::default();
        for run in runs {
            w.push(run.final_error(xs));
        }
        Some((w.mean()?, w.std()?))
    });
    ReplicationStats {
        problem: problem.name.to_string(),
        algorithm,
        replications: runs.len(),
        aborted,
        stages,
        final_err,
        max_grad_norm: runs.iter().map(|t| t.max_grad_norm).fold(0.0, f64::max),
    }
}

/// Result of one algorithm's replications, in replication order.
pub struct AlgorithmRuns {
    pub algorithm: Algorithm,
    pub runs: Vec<Trajectory>,
    /// `(replication, error)` for runs that aborted.
    pub failures: Vec<(u64, Error)>,
}

fn data_source(cfg: &ExperimentConfig) -> Result<DataSource> {
    Ok(match &cfg.replay {
        Some(path) => DataSource::Replay(ReplayStream::from_path(path)?),
        None => DataSource::Synthetic,
    })
}

/// Runs every replication of one algorithm on the current rayon pool.
/// Replication `r` draws from streams derived from `(seed, r)` alone, so the
/// result does not depend on the thread count.
pub fn run_algorithm(
    cfg: &ExperimentConfig,
    problem: &ProblemSpec,
    support: &Arc<GridSupport>,
    source: &DataSource,
    algorithm: Algorithm,
) -> AlgorithmRuns {
    let mut outcomes: Vec<(u64, Result<Trajectory>)> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| {
            let rc = cfg.run_config(problem, r);
            let out = match algorithm {
                Algorithm::Bayes => engine::run(problem, ParameterGrid::fresh(support.clone()), &rc, source),
                Algorithm::Oracle => baselines::run_oracle(problem, &rc),
                Algorithm::Mle => baselines::run_mle(problem, ParameterGrid::fresh(support.clone()), &rc, source),
            };
            (r, out)
        })
        .collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    outcomes.sort_by_key(|(r, _)| *r);
    for (r, out) in outcomes {
        match out {
            Ok(t) => runs.push(t),
            Err(e) => {
                warn!("{algorithm} replication {r} aborted: {e}");
                failures.push((r, e));
            }
        }
    }
    AlgorithmRuns { algorithm, runs, failures }
}

pub struct Experiment {
    pub stats: Vec<ReplicationStats>,
    pub warnings: Vec<String>,
}

/// Algorithms that will actually run; MLE is dropped for dependent problems.
pub fn effective_algorithms(cfg: &ExperimentConfig, problem: &ProblemSpec) -> (Vec<Algorithm>, Vec<String>) {
    let mut warnings = Vec::new();
    let algorithms = cfg
        .algorithms
        .iter()
        .copied()
        .filter(|a| {
            let drop = *a == Algorithm::Mle && problem.mode() == Mode::Dependent;
            if drop {
                warnings.push(format!("mle skipped: {} is decision-dependent", problem.name));
            }
            !drop
        })
        .collect();
    (algorithms, warnings)
}

/// Runs all requested algorithms. In decision-independent problems every
/// algorithm of replication `r` sees the same observation stream.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let problem = cfg.problem_spec()?;
    let (algorithms, warnings) = effective_algorithms(cfg, &problem);
    for w in &warnings {
        warn!("{w}");
    }
    let source = data_source(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // The oracle never touches the grid, so an oracle-only run skips building it.
    let spec = if algorithms.iter().all(|a| *a == Algorithm::Oracle) {
        GridSpec::Points(vec![problem.theta_true.clone()])
    } else {
        problem.grid_spec.clone()
    };
    let support = ParameterGrid::from_spec(&spec, &problem.family, Some(&problem.theta_true))?
        .support()
        .clone();
    let mut stats = Vec::with_capacity(algorithms.len());
    for algorithm in algorithms {
        info!("{}: running {algorithm} x {}", problem.name, cfg.replications);
        let out = pool.install(|| run_algorithm(cfg, &problem, &support, &source, algorithm));
        let aborted = out.failures.len();
        if aborted * 20 > cfg.replications {
            let (_, first) = out.failures.into_iter().next().expect("at least one failure");
            return Err(Error::TooManyAborts {
                algorithm: algorithm.name(),
                aborted,
                total: cfg.replications,
                first: Box::new(first),
            });
        }
        stats.push(aggregate(&problem, algorithm, &out.runs, aborted));
    }
    Ok(Experiment { stats, warnings })
}
