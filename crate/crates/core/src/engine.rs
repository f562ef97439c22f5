//! Stage loop: observe a batch, update the posterior, then run `K` projected
//! SGD steps on the posterior-averaged objective.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::PreparedDensity;
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::problems::{BoxBounds, Mode, ProblemKind, ProblemSpec};
use crate::replay::ReplayStream;
use crate::schedule::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Bayes,
    Oracle,
    Mle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Bayes, Algorithm::Oracle, Algorithm::Mle];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bayes => "bayes",
            Algorithm::Oracle => "oracle",
            Algorithm::Mle => "mle",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bayes" => Ok(Algorithm::Bayes),
            "oracle" => Ok(Algorithm::Oracle),
            "mle" => Ok(Algorithm::Mle),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (bayes, oracle, mle)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Number of stages `T`.
    pub horizon: usize,
    /// SGD iterations per stage `K`.
    pub inner: usize,
    /// Observations per stage `D`.
    pub batch: usize,
    pub schedule: StepSchedule,
    pub x_init: Vec<f64>,
    pub seed: u64,
    /// Selects an independent family of random streams under the same seed.
    pub replication: u64,
    pub mode: Mode,
    /// Stages between `d_t` evaluations; 0 disables them.
    pub diagnostic_stride: usize,
}

impl RunConfig {
    /// Reference settings for `problem`: `a_t = 2/(t+5)`, `K = 1`, its `D` and `x_1`.
    pub fn defaults_for(problem: &ProblemSpec) -> Self {
        RunConfig {
            horizon: default_horizon(problem),
            inner: 1,
            batch: problem.batch_size,
            schedule: StepSchedule::default(),
            x_init: problem.x_init.clone(),
            seed: 0,
            replication: 0,
            mode: problem.mode(),
            diagnostic_stride: 0,
        }
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        for (what, v) in [("T", self.horizon), ("K", self.inner), ("D", self.batch)] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be >= 1")));
            }
        }
        self.schedule.validate()?;
        if self.x_init.len() != problem.dim_x() {
            return Err(Error::DimensionMismatch {
                what: "x_init",
                expected: problem.dim_x(),
                got: self.x_init.len(),
            });
        }
        if !problem.bounds.contains(&self.x_init) {
            return Err(Error::Config(format!("x_init {:?} is outside the problem box", self.x_init)));
        }
        // The dependent estimator is valid for any family (its score term vanishes
        // under an identity map); the independent one is not.
        if self.mode == Mode::Independent && problem.mode() == Mode::Dependent {
            return Err(Error::Config(format!(
                "{} is a {} problem but the run is configured as {}",
                problem.name,
                problem.mode().as_str(),
                self.mode.as_str()
            )));
        }
        Ok(())
    }
}

pub fn default_horizon(problem: &ProblemSpec) -> usize {
    match problem.kind {
        ProblemKind::NewsvendorIndep | ProblemKind::NewsvendorDep => 1000,
        _ => 2000,
    }
}

/// Named random streams of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    /// Observation batches.
    Data = 0,
    /// Posterior draws `θ ~ π_t`.
    Theta = 1,
    /// Estimator draws `ξ ~ f(·; x, θ)`.
    Xi = 2,
    /// Monte Carlo diagnostics.
    Diagnostics = 3,
    /// Randomized output selection.
    Output = 4,
}

const ROLES: u64 = 5;

/// The stream for `role` in replication `replication` under `seed`.
pub fn stream(seed: u64, replication: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication.wrapping_mul(ROLES).wrapping_add(role as u64));
    rng
}

struct Streams {
    data: ChaCha8Rng,
    theta: ChaCha8Rng,
    xi: ChaCha8Rng,
    diag: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64, replication: u64) -> Self {
        Streams {
            data: stream(seed, replication, StreamRole::Data),
            theta: stream(seed, replication, StreamRole::Theta),
            xi: stream(seed, replication, StreamRole::Xi),
            diag: stream(seed, replication, StreamRole::Diagnostics),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub t: usize,
    /// Decision at stage entry, `x_t`.
    pub x: Vec<f64>,
    /// `‖x_t - x*‖₂` when the optimum is known.
    pub error: Option<f64>,
    /// `π_t(θ^c)` after the stage's update.
    pub mass_true: Option<f64>,
    /// KL from the true density to the posterior mixture at `x_{t+1}`.
    pub d_t: Option<f64>,
    /// Largest estimator norm among the stage's SGD steps.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub stages: Vec<StageRecord>,
    /// `x_{T+1}`.
    pub final_x: Vec<f64>,
    /// `K` used for the run.
    pub inner: usize,
    pub max_grad_norm: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// `x_t` for `1 ≤ t ≤ T + 1`.
    pub fn decision(&self, t: usize) -> &[f64] {
        if t == self.stages.len() + 1 {
            &self.final_x
        } else {
            &self.stages[t - 1].x
        }
    }

    pub fn final_error(&self, x_star: &[f64]) -> f64 {
        distance(&self.final_x, x_star)
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub enum DataSource {
    /// Batches drawn from `f(·; x_t, θ^c)`.
    Synthetic,
    Replay(ReplayStream),
}

/// What an observer sees after each stage.
pub struct StageView<'a> {
    pub t: usize,
    pub x_t: &'a [f64],
    pub x_next: &'a [f64],
    /// Decision the batch was observed under.
    pub decision: &'a [f64],
    /// Empty for the oracle, which ignores data.
    pub batch: &'a [Vec<f64>],
    /// Posterior `π_t` for algorithms that keep one.
    pub grid: Option<&'a ParameterGrid>,
}

pub fn project_box(x: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    bounds.project(x)
}

/// `∇h(x, ξ) + h(x, ξ)·score`.
fn lr_gradient(problem: &ProblemSpec, x: &[f64], xi: &[f64], score: &[f64]) -> Vec<f64> {
    let mut g = problem.grad_cost(x, xi);
    let c = problem.cost(x, xi);
    for (gk, sk) in g.iter_mut().zip(score) {
        *gk += c * sk;
    }
    g
}

/// IPA estimator: `θ ~ π`, `ξ ~ f(·; θ)`, returns `∇_x h(x, ξ)`.
pub fn grad_estimate_indep<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    grid: &ParameterGrid,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let theta = grid.sample_theta(rng);
    let xi = problem.family.sample(x, &theta, rng)?;
    Ok(problem.grad_cost(x, &xi))
}

/// Likelihood-ratio estimator: `θ ~ π`, `ξ ~ f(·; x, θ)`, returns
/// `∇_x h(x, ξ) + h(x, ξ)·∇_x log f̂(ξ; x)` with `f̂` the posterior mixture.
pub fn grad_estimate_dep<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    grid: &ParameterGrid,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let theta = grid.sample_theta(rng);
    let xi = problem.family.sample(x, &theta, rng)?;
    let score = grid.mixture_score(&xi, x)?;
    Ok(lr_gradient(problem, x, &xi, &score))
}

enum Driver {
    Bayes { grid: ParameterGrid, buf: Vec<f64> },
    Oracle { truth: PreparedDensity },
    Mle { grid: ParameterGrid, plug_in: Option<PreparedDensity> },
}

impl Driver {
    fn algorithm(&self) -> Algorithm {
        match self {
            Driver::Bayes { .. } => Algorithm::Bayes,
            Driver::Oracle { .. } => Algorithm::Oracle,
            Driver::Mle { .. } => Algorithm::Mle,
        }
    }

    fn grid(&self) -> Option<&ParameterGrid> {
        match self {
            Driver::Bayes { grid, .. } | Driver::Mle { grid, .. } => Some(grid),
            Driver::Oracle { .. } => None,
        }
    }

    fn absorb(&mut self, problem: &ProblemSpec, batch: &[Vec<f64>], decision: &[f64]) -> Result<()> {
        match self {
            Driver::Bayes { grid, .. } => grid.update(batch, decision),
            Driver::Oracle { .. } => Ok(()),
            Driver::Mle { grid, plug_in } => {
                grid.update(batch, decision)?;
                *plug_in = Some(problem.family.prepare(&grid.mle_point()?)?);
                Ok(())
            }
        }
    }

    fn gradient(
        &mut self,
        problem: &ProblemSpec,
        x: &[f64],
        dependent: bool,
        streams: &mut Streams,
    ) -> Result<Vec<f64>> {
        let family = &problem.family;
        match self {
            Driver::Bayes { grid, buf } => {
                let theta = grid.sample_theta(&mut streams.theta);
                let xi = family.sample(x, &theta, &mut streams.xi)?;
                if dependent {
                    let score = grid.mixture_score_with(&xi, x, buf)?;
                    Ok(lr_gradient(problem, x, &xi, &score))
                } else {
                    Ok(problem.grad_cost(x, &xi))
                }
            }
            Driver::Oracle { truth } => {
                let offset = family.map().offset(x, family.obs_dim())?;
                let xi = truth.sample(&offset, &mut streams.xi)?;
                if dependent {
                    let score = family.decision_score(&xi, x, &problem.theta_true)?;
                    Ok(lr_gradient(problem, x, &xi, &score))
                } else {
                    Ok(problem.grad_cost(x, &xi))
                }
            }
            Driver::Mle { plug_in, .. } => {
                let density = plug_in.as_ref().ok_or(Error::NoDataYet)?;
                let offset = family.map().offset(x, family.obs_dim())?;
                let xi = density.sample(&offset, &mut streams.xi)?;
                Ok(problem.grad_cost(x, &xi))
            }
        }
    }
}

/// Bayesian-SGD on `problem` starting from the prior held by `grid`.
pub fn run(
    problem: &ProblemSpec,
    grid: ParameterGrid,
    config: &RunConfig,
    source: &DataSource,
) -> Result<Trajectory> {
    run_observed(problem, grid, config, source, &mut |_| {})
}

/// [`run`] with a callback after every stage.
pub fn run_observed(
    problem: &ProblemSpec,
    grid: ParameterGrid,
    config: &RunConfig,
    source: &DataSource,
    observer: &mut dyn FnMut(&StageView<'_>),
) -> Result<Trajectory> {
    drive(problem, Driver::Bayes { grid, buf: Vec::new() }, config, source, observer)
}

pub(crate) fn run_oracle_observed(
    problem: &ProblemSpec,
    config: &RunConfig,
    observer: &mut dyn FnMut(&StageView<'_>),
) -> Result<Trajectory> {
    let truth = problem.family.prepare(&problem.theta_true)?;
    drive(problem, Driver::Oracle { truth }, config, &DataSource::Synthetic, observer)
}

pub(crate) fn run_mle_observed(
    problem: &ProblemSpec,
    grid: ParameterGrid,
    config: &RunConfig,
    source: &DataSource,
    observer: &mut dyn FnMut(&StageView<'_>),
) -> Result<Trajectory> {
    if problem.mode() == Mode::Dependent || config.mode == Mode::Dependent {
        return Err(Error::ModeUnsupported {
            algorithm: "mle",
            mode: Mode::Dependent.as_str(),
        });
    }
    drive(problem, Driver::Mle { grid, plug_in: None }, config, source, observer)
}

fn drive(
    problem: &ProblemSpec,
    mut driver: Driver,
    config: &RunConfig,
    source: &DataSource,
    observer: &mut dyn FnMut(&StageView<'_>),
) -> Result<Trajectory> {
    config.validate(problem)?;
    if let Some(grid) = driver.grid() {
        if grid.family() != &problem.family {
            return Err(Error::Config("grid family differs from the problem's family".into()));
        }
    }
    let mut streams = Streams::new(config.seed, config.replication);
    let mut x = config.x_init.clone();
    let mut stages = Vec::with_capacity(config.horizon);
    let mut max_grad_norm: f64 = 0.0;
    let uses_data = !matches!(driver, Driver::Oracle { .. });
    let dependent = config.mode == Mode::Dependent;
    for t in 1..=config.horizon {
        let abort = |e: Error| Error::RunAborted { stage: t, source: Box::new(e) };
        let x_t = x.clone();
        let (decision, batch) = if !uses_data {
            (x_t.clone(), Vec::new())
        } else {
            match source {
                DataSource::Synthetic => {
                    let batch = (0..config.batch)
                        .map(|_| problem.family.sample(&x_t, &problem.theta_true, &mut streams.data))
                        .collect::<Result<Vec<_>>>()
                        .map_err(abort)?;
                    (x_t.clone(), batch)
                }
                DataSource::Replay(stream) => {
                    let rec = stream.stage(t).map_err(abort)?;
                    (rec.decision.clone(), rec.batch.clone())
                }
            }
        };
        if uses_data {
            driver.absorb(problem, &batch, &decision).map_err(abort)?;
        }
        let mut stage_grad: f64 = 0.0;
        for j in 0..config.inner {
            let step = config.schedule.step_at((t - 1) * config.inner + j + 1);
            let g = driver.gradient(problem, &x, dependent, &mut streams).map_err(abort)?;
            stage_grad = stage_grad.max(norm(&g));
            let moved: Vec<f64> = x.iter().zip(&g).map(|(xk, gk)| xk - step * gk).collect();
            x = problem.bounds.project(&moved);
        }
        max_grad_norm = max_grad_norm.max(stage_grad);
        let grid = driver.grid();
        let mass_true = match grid {
            Some(g) if g.true_index().is_some() => Some(g.posterior_mass_true().map_err(abort)?),
            _ => None,
        };
        let d_t = match (&driver, config.diagnostic_stride) {
            (Driver::Bayes { grid, .. }, s) if s > 0 && t % s == 0 && grid.true_index().is_some() => {
                Some(grid.kl_true_to_mixture(&x, &mut streams.diag).map_err(abort)?.value)
            }
            _ => None,
        };
        observer(&StageView {
            t,
            x_t: &x_t,
            x_next: &x,
            decision: &decision,
            batch: &batch,
            grid: driver.grid(),
        });
        stages.push(StageRecord {
            t,
            error: problem.x_star.as_deref().map(|xs| distance(&x_t, xs)),
            x: x_t,
            mass_true,
            d_t,
            grad_norm: stage_grad,
        });
    }
    Ok(Trajectory {
        algorithm: driver.algorithm(),
        stages,
        final_x: x,
        inner: config.inner,
        max_grad_norm,
    })
}

/// `z_T`: picks `x_t`, `1 ≤ t ≤ T`, with probability proportional to the
/// step mass spent at stage `t` (the sum of its `K` inner steps).
pub fn randomized_iterate<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    schedule: &StepSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let k = trajectory.inner.max(1);
    let weights: Vec<f64> = (1..=trajectory.horizon())
        .map(|t| (0..k).map(|j| schedule.step_at((t - 1) * k + j + 1)).sum())
        .collect();
    match WeightedIndex::new(&weights) {
        Ok(dist) => trajectory.stages[dist.sample(rng)].x.clone(),
        // Zero steps everywhere: the iterate never moved.
        Err(_) => trajectory.decision(trajectory.horizon()).to_vec(),
    }
}
