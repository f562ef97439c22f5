//! Self-checks runnable as a suite: posterior recursion against direct Bayes,
//! estimator unbiasedness, score finite differences, Pinsker's inequality and
//! the convergence-rate slope of the randomized output.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dist::{DecisionMap, DensityFamily, ParamPoint};
use crate::engine::{
    self, grad_estimate_dep, grad_estimate_indep, randomized_iterate, stream, DataSource, RunConfig,
    StreamRole,
};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ParameterGrid};
use crate::problems::{self, Mode, ProblemSpec};
use crate::schedule::StepSchedule;
use crate::baselines;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
    pub stderr: Option<f64>,
    pub seeds: Vec<u64>,
    /// Whether a failure should fail the suite.
    pub gated: bool,
    pub note: Option<String>,
}

impl ValidationReport {
    fn new(name: impl Into<String>, measured: f64, bound: f64, seeds: Vec<u64>) -> Self {
        ValidationReport {
            name: name.into(),
            pass: measured <= bound,
            measured,
            bound,
            stderr: None,
            seeds,
            gated: true,
            note: None,
        }
    }

    fn ungated(mut self) -> Self {
        self.gated = false;
        self
    }
}

/// One `key=value` block; blocks are separated by blank lines.
impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(f, "name={}", self.name)?;
        writeln!(f, "pass={}", self.pass)?;
        writeln!(f, "measured={:e}", self.measured)?;
        writeln!(f, "bound={:e}", self.bound)?;
        match self.stderr {
            Some(se) => writeln!(f, "stderr={se:e}")?,
            None => writeln!(f, "stderr=")?,
        }
        writeln!(f, "seed={}", seeds.join(","))?;
        writeln!(f, "gated={}", self.gated)?;
        writeln!(f, "note={}", self.note.as_deref().unwrap_or(""))
    }
}

fn full_grid(problem: &ProblemSpec) -> Result<ParameterGrid> {
    ParameterGrid::from_spec(&problem.grid_spec, &problem.family, Some(&problem.theta_true))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Streams `history_length` random stages through [`ParameterGrid::update`] and
/// compares against the posterior recomputed in one shot from the full history.
/// Decisions follow a random walk inside the box.
pub fn check_posterior_equivalence(
    problem: &ProblemSpec,
    grid_spec: &GridSpec,
    history_length: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let family = &problem.family;
    let mut grid = ParameterGrid::from_spec(grid_spec, family, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo: Vec<f64> = problem.bounds.lo.iter().map(|l| l.max(0.1)).collect();
    let hi: Vec<f64> = problem.bounds.hi.iter().map(|h| h.min(20.0)).collect();
    let mut x = problem.x_init.clone();
    let mut history: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::with_capacity(history_length);
    for _ in 0..history_length {
        if problem.mode() == Mode::Dependent {
            for k in 0..x.len() {
                let e: f64 = rng.sample(StandardNormal);
                x[k] = (x[k] + 0.5 * e).clamp(lo[k], hi[k]);
            }
        }
        let batch = (0..problem.batch_size)
            .map(|_| family.sample(&x, &problem.theta_true, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        grid.update(&batch, &x)?;
        history.push((x.clone(), batch));
    }
    let n = grid.len();
    let mut direct: Vec<f64> = grid.log_prior().to_vec();
    for (i, w) in direct.iter_mut().enumerate() {
        let theta = grid.point(i);
        for (x, batch) in &history {
            for y in batch {
                *w += family.log_density(y, x, &theta)?;
            }
        }
    }
    let z = log_sum_exp(&direct);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let lp = direct[i] - z;
        let p = lp.exp();
        let got = grid.probabilities()[i];
        let err = if p > 0.0 && p.is_normal() {
            (got - p).abs() / p
        } else {
            // Underflowed mass: compare in log space.
            (grid.log_posterior()[i] - lp).abs() / lp.abs().max(1.0)
        };
        worst = worst.max(err);
    }
    Ok(ValidationReport::new(
        format!("posterior_equivalence/{}/{history_length}", problem.name),
        worst,
        1e-9,
        vec![seed],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorCase {
    Uniform,
    /// All mass on `θ^c`.
    Degenerate,
    /// Mass `∝ 0.8^{|i - i_c|}` over grid indices.
    Geometric,
}

impl PosteriorCase {
    pub const ALL: [PosteriorCase; 3] =
        [PosteriorCase::Uniform, PosteriorCase::Degenerate, PosteriorCase::Geometric];

    pub fn name(self) -> &'static str {
        match self {
            PosteriorCase::Uniform => "uniform",
            PosteriorCase::Degenerate => "degenerate",
            PosteriorCase::Geometric => "geometric",
        }
    }

    pub fn build(self, problem: &ProblemSpec) -> Result<ParameterGrid> {
        let grid = full_grid(problem)?;
        let ic = grid.true_index().ok_or(Error::TrueIndexUnset)?;
        let weights: Vec<f64> = (0..grid.len())
            .map(|i| match self {
                PosteriorCase::Uniform => 0.0,
                PosteriorCase::Degenerate if i == ic => 0.0,
                PosteriorCase::Degenerate => f64::NEG_INFINITY,
                PosteriorCase::Geometric => (i.abs_diff(ic) as f64) * 0.8f64.ln(),
            })
            .collect();
        grid.with_log_posterior(&weights)
    }
}

/// `∇_x Σ_θ π(θ) H(x, θ)` from the closed form.
pub fn analytic_average_gradient(problem: &ProblemSpec, grid: &ParameterGrid, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    for (i, p) in grid.probabilities().iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        let g = problem
            .analytic_grad_h(x, &grid.point(i))
            .ok_or_else(|| Error::NoAnalyticH(problem.name.into()))?;
        for (o, gk) in out.iter_mut().zip(g) {
            *o += p * gk;
        }
    }
    Ok(out)
}

/// Monte Carlo mean of the mode's estimator against the analytic gradient of
/// the posterior-averaged objective. `measured` is the largest per-coordinate
/// z-score.
pub fn check_unbiasedness(
    problem: &ProblemSpec,
    case: PosteriorCase,
    x: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if !problem.has_analytic_h() {
        return Err(Error::NoAnalyticH(problem.name.into()));
    }
    let grid = case.build(problem)?;
    let target = analytic_average_gradient(problem, &grid, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.len();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for k in 0..n_draws {
        let g = match problem.mode() {
            Mode::Independent => grad_estimate_indep(problem, &grid, x, &mut rng)?,
            Mode::Dependent => grad_estimate_dep(problem, &grid, x, &mut rng)?,
        };
        for j in 0..d {
            let delta = g[j] - mean[j];
            mean[j] += delta / (k + 1) as f64;
            m2[j] += delta * (g[j] - mean[j]);
        }
    }
    let mut worst: f64 = 0.0;
    let mut worst_se = 0.0;
    for j in 0..d {
        let se = (m2[j] / (n_draws - 1) as f64 / n_draws as f64).sqrt();
        let diff = (mean[j] - target[j]).abs();
        let z = if se > 0.0 {
            diff / se
        } else if diff <= 1e-12 * target[j].abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        if z >= worst {
            worst = z;
            worst_se = se;
        }
    }
    let mut report = ValidationReport::new(
        format!("unbiasedness/{}/{}/{:?}", problem.name, case.name(), x),
        worst,
        4.0,
        vec![seed],
    );
    report.stderr = Some(worst_se);
    Ok(report)
}

/// Test points for the unbiasedness matrix, three per closed-form problem.
pub fn unbiasedness_points(problem: &ProblemSpec) -> Vec<Vec<f64>> {
    match problem.name {
        "quad-indep-uni" => vec![vec![2.75], vec![0.0], vec![6.0]],
        "quad-indep-multi" => vec![vec![-1.0, 0.0], vec![5.0, 5.0], vec![2.0, -3.0]],
        "quad-dep-uni" => vec![vec![8.0 / 3.0], vec![1.0], vec![5.0]],
        "quad-dep-multi" => vec![vec![4.0 / 3.0, 5.0 / 3.0], vec![5.0, 5.0], vec![0.5, 3.0]],
        _ => Vec::new(),
    }
}

/// Outcome of the full unbiasedness matrix.
#[derive(Debug, Clone)]
pub struct UnbiasednessMatrix {
    /// Final reports, after retries.
    pub reports: Vec<ValidationReport>,
    pub cells: usize,
    pub first_try_passes: usize,
}

/// Every closed-form problem × posterior case × test point. A failing cell is
/// rerun once with a fresh seed.
pub fn unbiasedness_matrix(n_draws: usize, seed: u64) -> Result<UnbiasednessMatrix> {
    let mut cells = Vec::new();
    for name in ["quad-indep-uni", "quad-indep-multi", "quad-dep-uni", "quad-dep-multi"] {
        let p = problems::by_name(name)?;
        for case in PosteriorCase::ALL {
            for x in unbiasedness_points(&p) {
                cells.push((p.clone(), case, x));
            }
        }
    }
    let results: Vec<(ValidationReport, bool)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, (p, case, x))| {
            let s = seed.wrapping_add(i as u64);
            let first = check_unbiasedness(p, *case, x, n_draws, s)?;
            if first.pass {
                return Ok((first, true));
            }
            let retry_seed = s ^ 0x9e37_79b9_7f4a_7c15;
            let mut second = check_unbiasedness(p, *case, x, n_draws, retry_seed)?;
            second.seeds.insert(0, s);
            second.note = Some(format!("retried after z={:.3}", first.measured));
            Ok((second, false))
        })
        .collect::<Result<_>>()?;
    let first_try_passes = results.iter().filter(|(_, first)| *first).count();
    Ok(UnbiasednessMatrix {
        cells: results.len(),
        first_try_passes,
        reports: results.into_iter().map(|(r, _)| r).collect(),
    })
}

fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            Ok((f(&up)? - f(&dn)?) / (2.0 * h))
        })
        .collect()
}

fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

struct ScoreCase {
    name: &'static str,
    family: DensityFamily,
    random_x: fn(&mut ChaCha8Rng) -> Vec<f64>,
    random_theta: fn(&mut ChaCha8Rng) -> ParamPoint,
}

fn score_cases() -> Vec<ScoreCase> {
    fn mvn_theta(rng: &mut ChaCha8Rng) -> ParamPoint {
        let mut c: Vec<f64> = (0..3).map(|_| rng.random_range(5.0..25.0)).collect();
        c.extend((0..3).map(|_| rng.random_range(1.0..12.0)));
        c.extend((0..3).map(|_| rng.random_range(0.1..0.5)));
        ParamPoint::new(c)
    }
    vec![
        ScoreCase {
            name: "normal-additive",
            family: DensityFamily::normal_known_var(4.0, DecisionMap::AdditiveShift).expect("valid family"),
            random_x: |rng| vec![rng.random_range(-10.0..10.0)],
            random_theta: |rng| ParamPoint::scalar(rng.random_range(1.0..30.0)),
        },
        ScoreCase {
            name: "exponential-quadratic-gap",
            family: DensityFamily::exponential_by_mean(DecisionMap::QuadraticGap).expect("valid family"),
            random_x: |rng| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            random_theta: |rng| ParamPoint::scalar(rng.random_range(1.0..20.0)),
        },
        ScoreCase {
            name: "mvn-power-demand",
            family: DensityFamily::multivariate_normal(
                3,
                DecisionMap::PowerDemand { alpha: vec![1.0; 3], beta: vec![0.5; 3] },
            )
            .expect("valid family"),
            random_x: |rng| (0..3).map(|_| rng.random_range(1.0..30.0)).collect(),
            random_theta: mvn_theta,
        },
    ]
}

/// `decision_score` and `mixture_score` against central differences of the
/// corresponding log-densities (step `1e-4`) at `states` random interior states.
pub fn check_score_fd(states: usize, seed: u64) -> Result<Vec<ValidationReport>> {
    const H: f64 = 1e-4;
    const TOL: f64 = 1e-5;
    let mut reports = Vec::new();
    for (ci, case) in score_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(ci as u64));
        let fam = &case.family;
        let mut worst_point: f64 = 0.0;
        let mut worst_mix: f64 = 0.0;
        for _ in 0..states {
            let x = (case.random_x)(&mut rng);
            let theta = (case.random_theta)(&mut rng);
            let xi = fam.sample(&x, &theta, &mut rng)?;
            let analytic = fam.decision_score(&xi, &x, &theta)?;
            let numeric = central_difference(|z| fam.log_density(&xi, z, &theta), &x, H)?;
            worst_point = worst_point.max(relative_gap(&analytic, &numeric));

            let points: Vec<ParamPoint> = (0..12).map(|_| (case.random_theta)(&mut rng)).collect();
            let grid = ParameterGrid::uniform(&points, fam)?;
            let weights: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-3.0..0.0)).collect();
            let grid = grid.with_log_posterior(&weights)?;
            let analytic = grid.mixture_score(&xi, &x)?;
            let numeric = central_difference(|z| grid.mixture_log_density(&xi, z), &x, H)?;
            worst_mix = worst_mix.max(relative_gap(&analytic, &numeric));
        }
        let s = seed.wrapping_add(ci as u64);
        reports.push(ValidationReport::new(format!("score_fd/decision/{}", case.name), worst_point, TOL, vec![s]));
        reports.push(ValidationReport::new(format!("score_fd/mixture/{}", case.name), worst_mix, TOL, vec![s]));
    }
    Ok(reports)
}

/// `‖f* - f̂‖₁ ≤ √(2·KL(f* ‖ f̂))` at each `(posterior, decision)` state.
/// `measured` is the largest excess of the left side over the right.
pub fn check_pinsker(
    name: &str,
    states: &[(ParameterGrid, Vec<f64>)],
    seed: u64,
) -> Result<ValidationReport> {
    const TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut slack = TOL;
    for (grid, x) in states {
        let kl = grid.kl_true_to_mixture(x, &mut rng)?;
        let l1 = grid.l1_true_to_mixture(x, &mut rng)?;
        let rhs = (2.0 * kl.value.max(0.0)).sqrt();
        let excess = l1.value - rhs;
        if let (Some(se_kl), Some(se_l1)) = (kl.stderr, l1.stderr) {
            // Monte Carlo states get four standard errors of room.
            let se_rhs = if rhs > 0.0 { se_kl / rhs } else { se_kl.sqrt() };
            slack = slack.max(TOL + 4.0 * (se_l1 + se_rhs));
        }
        worst = worst.max(excess);
    }
    let mut report = ValidationReport::new(format!("pinsker/{name}"), worst, slack, vec![seed]);
    if states.is_empty() {
        report.pass = true;
        report.measured = 0.0;
    }
    Ok(report)
}

/// Posterior states of a Bayesian-SGD run on `problem`, sampled every `stride` stages.
pub fn run_states(
    problem: &ProblemSpec,
    config: &RunConfig,
    stride: usize,
) -> Result<Vec<(ParameterGrid, Vec<f64>)>> {
    let mut states = Vec::new();
    engine::run_observed(problem, full_grid(problem)?, config, &DataSource::Synthetic, &mut |v| {
        if stride > 0 && v.t % stride == 0 {
            if let Some(g) = v.grid {
                states.push((g.clone(), v.x_next.to_vec()));
            }
        }
    })?;
    Ok(states)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean of `‖∇H(z_T, θ^c)‖²` over replications for one horizon and schedule.
pub fn mean_sq_grad_at_output(
    problem: &ProblemSpec,
    schedule: StepSchedule,
    horizon: usize,
    replications: usize,
    seed: u64,
    oracle: bool,
) -> Result<f64> {
    let support = full_grid(problem)?.support().clone();
    let values: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = RunConfig {
                horizon,
                schedule,
                seed,
                replication: r,
                ..RunConfig::defaults_for(problem)
            };
            let tr = if oracle {
                baselines::run_oracle(problem, &cfg)?
            } else {
                engine::run(problem, ParameterGrid::fresh(support.clone()), &cfg, &DataSource::Synthetic)?
            };
            let z = randomized_iterate(&tr, &schedule, &mut stream(seed, r, StreamRole::Output));
            let g = problem
                .analytic_grad_h(&z, &problem.theta_true)
                .ok_or_else(|| Error::NoAnalyticH(problem.name.into()))?;
            Ok(g.iter().map(|v| v * v).sum())
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / replications as f64)
}

/// Slope of `log E‖∇H(z_T, θ^c)‖²` against `log T` under the constant step
/// `a/√T`; passes at `≤ -0.25`.
pub fn check_rate_slope(
    problem: &ProblemSpec,
    a: f64,
    horizons: &[usize],
    replications: usize,
    seed: u64,
    oracle: bool,
) -> Result<ValidationReport> {
    let label = if oracle { "oracle" } else { "bayes" };
    let name = format!("rate_slope/{}/{label}", problem.name);
    if problem.mode() != Mode::Independent || !problem.has_analytic_h() {
        return Err(Error::Config(format!("{name}: needs a decision-independent closed-form problem")));
    }
    if horizons.len() < 2 {
        let mut r = ValidationReport::new(name, f64::NAN, -0.25, vec![seed]);
        r.pass = false;
        r.note = Some("InsufficientPoints".into());
        return Ok(r);
    }
    let means = horizons
        .iter()
        .map(|&t| {
            let schedule = StepSchedule::ConstOverSqrtT { a, horizon: t };
            mean_sq_grad_at_output(problem, schedule, t, replications, seed, oracle)
        })
        .collect::<Result<Vec<_>>>()?;
    let ts: Vec<f64> = horizons.iter().map(|t| *t as f64).collect();
    let slope = log_log_slope(&ts, &means);
    let mut r = ValidationReport::new(name, slope, -0.25, vec![seed]);
    r.note = Some(format!("a={a}; means={means:?}"));
    Ok(r)
}

/// Decreasing schedules `a/t` and `a/√t`: mean `‖∇H(z_T)‖²` should fall from
/// the shortest to the longest horizon. Reported, not gated.
pub fn check_schedule_decrease(
    problem: &ProblemSpec,
    schedule: StepSchedule,
    horizons: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let means = horizons
        .iter()
        .map(|&t| mean_sq_grad_at_output(problem, schedule, t, replications, seed, false))
        .collect::<Result<Vec<_>>>()?;
    let first = means.first().copied().unwrap_or(f64::NAN);
    let last = means.last().copied().unwrap_or(f64::NAN);
    let mut r = ValidationReport::new(
        format!("schedule_decrease/{}/{schedule}", problem.name),
        last / first,
        1.0,
        vec![seed],
    )
    .ungated();
    r.note = Some(format!("means={means:?}"));
    Ok(r)
}

/// Along one run, `‖E_{π_t}∇H(x_t, θ) - ∇H(x_t, θ^c)‖² · Dt / log(Dt)`.
/// `measured` is its largest value over the second half of the run;
/// reported, not gated.
pub fn bias_concentration(problem: &ProblemSpec, config: &RunConfig) -> Result<ValidationReport> {
    let mut series = Vec::new();
    let mut failure = None;
    engine::run_observed(problem, full_grid(problem)?, config, &DataSource::Synthetic, &mut |v| {
        let Some(grid) = v.grid else { return };
        let avg = match analytic_average_gradient(problem, grid, v.x_t) {
            Ok(g) => g,
            Err(e) => {
                failure.get_or_insert(e);
                return;
            }
        };
        let truth = problem.analytic_grad_h(v.x_t, &problem.theta_true).unwrap_or_default();
        let bias: f64 = avg.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
        let dt = (config.batch * v.t) as f64;
        if dt > 1.0 {
            series.push(bias * dt / dt.ln());
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let tail = &series[series.len() / 2..];
    let worst = tail.iter().copied().fold(0.0, f64::max);
    let mut r = ValidationReport::new(format!("bias_concentration/{}", problem.name), worst, f64::INFINITY, vec![config.seed])
        .ungated();
    r.pass = worst.is_finite();
    Ok(r)
}

/// Every check at its default size. `filter` keeps checks whose name contains it.
pub fn default_suite(seed: u64, filter: Option<&str>) -> Result<Vec<ValidationReport>> {
    type Check = Box<dyn Fn(u64) -> Result<Vec<ValidationReport>> + Send + Sync>;
    let checks: Vec<(&str, Check)> = vec![
        (
            "posterior_equivalence",
            Box::new(|seed| {
                ["quad-indep-uni", "quad-indep-multi", "quad-dep-uni", "quad-dep-multi"]
                    .iter()
                    .map(|n| {
                        let p = problems::by_name(n)?;
                        check_posterior_equivalence(&p, &p.grid_spec, 500, seed)
                    })
                    .collect()
            }),
        ),
        (
            "unbiasedness",
            Box::new(|seed| Ok(unbiasedness_matrix(200_000, seed)?.reports)),
        ),
        ("score_fd", Box::new(|seed| check_score_fd(20, seed))),
        (
            "pinsker",
            Box::new(|seed| {
                let p = problems::quad_dep_uni();
                let cfg = RunConfig { seed, horizon: 2000, ..RunConfig::defaults_for(&p) };
                let states = run_states(&p, &cfg, 50)?;
                let degenerate = vec![(PosteriorCase::Degenerate.build(&p)?, vec![1.0])];
                Ok(vec![
                    check_pinsker("quad-dep-uni/run", &states, seed)?,
                    check_pinsker("quad-dep-uni/degenerate", &degenerate, seed)?,
                ])
            }),
        ),
        (
            "rate_slope",
            Box::new(|seed| {
                let p = problems::quad_indep_uni();
                let ts = [100, 400, 1600, 6400];
                Ok(vec![
                    check_rate_slope(&p, RATE_SLOPE_A, &ts, 200, seed, false)?,
                    check_rate_slope(&p, RATE_SLOPE_A, &ts, 200, seed, true)?,
                ])
            }),
        ),
        (
            "schedule_decrease",
            Box::new(|seed| {
                let p = problems::quad_indep_uni();
                let ts = [100, 400, 1600];
                Ok(vec![
                    check_schedule_decrease(&p, StepSchedule::InvT { a: 1.0 }, &ts, 100, seed)?,
                    check_schedule_decrease(&p, StepSchedule::InvSqrtT { a: 1.0 }, &ts, 100, seed)?,
                ])
            }),
        ),
        (
            "bias_concentration",
            Box::new(|seed| {
                ["quad-indep-uni", "quad-dep-uni"]
                    .iter()
                    .map(|n| {
                        let p = problems::by_name(n)?;
                        bias_concentration(&p, &RunConfig { seed, ..RunConfig::defaults_for(&p) })
                    })
                    .collect()
            }),
        ),
    ];
    let selected: Vec<_> = checks
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f) || f.contains(name)))
        .collect();
    let nested: Vec<Vec<ValidationReport>> = selected
        .par_iter()
        .map(|(_, check)| check(seed))
        .collect::<Result<_>>()?;
    let mut out: Vec<ValidationReport> = nested.into_iter().flatten().collect();
    if let Some(f) = filter {
        out.retain(|r| r.name.contains(f) || r.name.split('/').next().is_some_and(|head| f.contains(head)));
    }
    Ok(out)
}

/// Step scale for the rate-slope check on `quad-indep-uni`. Its objective
/// gradient `2x - 10 + 0.5θ` is 2-Lipschitz, so `a/√T < 1/2` for every `T ≥ 100`.
pub const RATE_SLOPE_A: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_history_is_prior() {
        let p = problems::quad_dep_uni();
        let r = check_posterior_equivalence(&p, &p.grid_spec, 0, 1).unwrap();
        assert!(r.pass && r.measured == 0.0);
    }

    #[test]
    fn posterior_equivalence_passes() {
        for name in ["quad-indep-uni", "quad-dep-uni", "quad-dep-multi"] {
            let p = problems::by_name(name).unwrap();
            let r = check_posterior_equivalence(&p, &p.grid_spec, 500, 7).unwrap();
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn posterior_equivalence_small_mvn_grid() {
        let p = problems::newsvendor(true);
        let spec = GridSpec::Cartesian(vec![
            vec![5.0, 10.0, 15.0],
            vec![15.0, 20.0],
            vec![20.0, 25.0],
            vec![3.0, 6.0],
            vec![6.0],
            vec![9.0, 12.0],
            vec![0.1, 0.4],
            vec![0.3],
            vec![0.5],
        ]);
        let r = check_posterior_equivalence(&p, &spec, 200, 3).unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn posterior_cases() {
        let p = problems::quad_indep_uni();
        let g = PosteriorCase::Degenerate.build(&p).unwrap();
        assert_eq!(g.posterior_mass_true().unwrap(), 1.0);
        let g = PosteriorCase::Geometric.build(&p).unwrap();
        let probs = g.probabilities();
        assert!((probs[7] / probs[8] - 0.8).abs() < 1e-12);
        assert!((probs[10] / probs[8] - 0.64).abs() < 1e-12);
        let g = PosteriorCase::Uniform.build(&p).unwrap();
        assert!((g.probabilities()[3] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn uniform_target_values() {
        let p = problems::quad_indep_uni();
        let g = PosteriorCase::Uniform.build(&p).unwrap();
        let t = analytic_average_gradient(&p, &g, &[0.0]).unwrap();
        assert!((t[0] + 4.75).abs() < 1e-12);
        let p = problems::quad_dep_uni();
        let g = PosteriorCase::Uniform.build(&p).unwrap();
        let t = analytic_average_gradient(&p, &g, &[1.0]).unwrap();
        assert!((t[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn unbiasedness_examples() {
        let p = problems::quad_indep_uni();
        let r = check_unbiasedness(&p, PosteriorCase::Degenerate, &[2.75], 200_000, 11).unwrap();
        assert!(r.pass, "{r}");
        let r = check_unbiasedness(&p, PosteriorCase::Uniform, &[0.0], 200_000, 12).unwrap();
        assert!(r.pass, "{r}");
        let p = problems::quad_dep_uni();
        let r = check_unbiasedness(&p, PosteriorCase::Uniform, &[1.0], 200_000, 13).unwrap();
        assert!(r.pass, "{r}");
        let r = check_unbiasedness(&p, PosteriorCase::Degenerate, &[8.0 / 3.0], 200_000, 14).unwrap();
        assert!(r.pass, "{r}");
        let p = problems::quad_dep_multi();
        let r = check_unbiasedness(&p, PosteriorCase::Geometric, &[0.3, 2.2], 200_000, 15).unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn biased_estimator_is_detected() {
        // Dropping the score term biases the dependent estimator.
        let p = problems::quad_dep_uni();
        let grid = PosteriorCase::Uniform.build(&p).unwrap();
        let target = analytic_average_gradient(&p, &grid, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let mean: f64 = (0..n)
            .map(|_| grad_estimate_indep(&p, &grid, &[1.0], &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - target[0]).abs() > 0.5);
    }

    #[test]
    fn newsvendor_has_no_closed_form() {
        let p = problems::newsvendor(false);
        assert!(matches!(
            check_unbiasedness(&p, PosteriorCase::Uniform, &[1.0, 1.0, 1.0], 10, 0),
            Err(Error::NoAnalyticH(_))
        ));
    }

    #[test]
    fn score_fd_passes() {
        for r in check_score_fd(20, 5).unwrap() {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn pinsker_degenerate_is_zero() {
        let p = problems::quad_dep_uni();
        let states = vec![(PosteriorCase::Degenerate.build(&p).unwrap(), vec![1.0])];
        let r = check_pinsker("degenerate", &states, 0).unwrap();
        assert!(r.pass && r.measured.abs() < 1e-9, "{r}");
    }

    #[test]
    fn pinsker_strict_for_half_wrong_mixture() {
        let fam = DensityFamily::normal_known_var(4.0, DecisionMap::Identity).unwrap();
        let spec = GridSpec::Points(vec![ParamPoint::scalar(0.0), ParamPoint::scalar(8.0)]);
        let grid = ParameterGrid::from_spec(&spec, &fam, Some(&ParamPoint::scalar(0.0))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kl = grid.kl_true_to_mixture(&[0.0], &mut rng).unwrap().value;
        let l1 = grid.l1_true_to_mixture(&[0.0], &mut rng).unwrap().value;
        // Direct values for f* = N(0,16), f̂ = ½N(0,16) + ½N(8,16):
        // L1 = Φ(1) - Φ(-1) = 0.6826894921370859.
        assert!((l1 - 0.682_689_492_137_085_9).abs() < 1e-9, "{l1}");
        assert!(l1 < (2.0 * kl).sqrt() - 0.1);
        let r = check_pinsker("two-point", &[(grid, vec![0.0])], 0).unwrap();
        assert!(r.pass && r.measured < -0.1);
    }

    #[test]
    fn pinsker_along_short_run() {
        let p = problems::quad_dep_uni();
        let cfg = RunConfig { seed: 2, horizon: 300, ..RunConfig::defaults_for(&p) };
        let states = run_states(&p, &cfg, 50).unwrap();
        assert_eq!(states.len(), 6);
        let r = check_pinsker("run", &states, 2).unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn slope_fit() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_horizon_is_flagged() {
        let p = problems::quad_indep_uni();
        let r = check_rate_slope(&p, 1.0, &[100], 10, 0, false).unwrap();
        assert!(!r.pass);
        assert_eq!(r.note.as_deref(), Some("InsufficientPoints"));
    }

    #[test]
    fn report_format() {
        let mut r = ValidationReport::new("x/y", 0.5, 1.0, vec![3, 4]);
        r.stderr = Some(0.25);
        let text = r.to_string();
        assert_eq!(
            text,
            "name=x/y\npass=true\nmeasured=5e-1\nbound=1e0\nstderr=2.5e-1\nseed=3,4\ngated=true\nnote=\n"
        );
    }
}
