//! Benchmark problems: a cost `h(x, ξ)`, its decision gradient, the
//! observation family, the decision box and the true parameter.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use statrs::function::erf::erfc;

use crate::dist::{DecisionMap, DensityFamily, ParamPoint};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Every problem name accepted by [`by_name`].
pub const PROBLEM_NAMES: [&str; 6] = [
    "quad-indep-uni",
    "quad-indep-multi",
    "quad-dep-uni",
    "quad-dep-multi",
    "newsvendor-indep",
    "newsvendor-dep",
];

/// Lower bound of the decision-dependent newsvendor box; `x^{β-1}` diverges at 0.
pub const NEWSVENDOR_DEP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Independent,
    Dependent,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Independent => "decision-independent",
            Mode::Dependent => "decision-dependent",
        }
    }
}

/// Axis-aligned feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { what: "box bounds", expected: lo.len(), got: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::Config("box lower bound exceeds upper bound".into()));
        }
        Ok(BoxBounds { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        BoxBounds { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }

    /// Euclidean projection onto the box (elementwise clamp).
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .map(|((v, l), h)| v.clamp(*l, *h))
            .collect()
    }
}

/// Unit cost, price, salvage value and capacity per item.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsvendorParams {
    pub cost: Vec<f64>,
    pub price: Vec<f64>,
    pub salvage: Vec<f64>,
    pub capacity: Vec<f64>,
}

impl NewsvendorParams {
    pub fn new(cost: Vec<f64>, price: Vec<f64>, salvage: Vec<f64>, capacity: Vec<f64>) -> Result<Self> {
        let d = cost.len();
        for (what, v) in [("price", &price), ("salvage", &salvage), ("capacity", &capacity)] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { what, expected: d, got: v.len() });
            }
        }
        for i in 0..d {
            if !(salvage[i] < cost[i] && cost[i] < price[i]) {
                return Err(Error::Config(format!("item {i}: need salvage < cost < price")));
            }
            if !(capacity[i] > 0.0) {
                return Err(Error::Config(format!("item {i}: capacity must be positive")));
            }
        }
        Ok(NewsvendorParams { cost, price, salvage, capacity })
    }

    /// `c·x - p·min(x, max(0, ξ)) - s·max(0, x - ξ)`.
    pub fn cost_value(&self, x: &[f64], xi: &[f64]) -> f64 {
        (0..x.len())
            .map(|i| {
                self.cost[i] * x[i]
                    - self.price[i] * x[i].min(xi[i].max(0.0))
                    - self.salvage[i] * (x[i] - xi[i]).max(0.0)
            })
            .sum()
    }

    /// Per item `c - p` when `x ≤ ξ`, `c - s` otherwise.
    pub fn cost_gradient(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                if x[i] <= xi[i] {
                    self.cost[i] - self.price[i]
                } else {
                    self.cost[i] - self.salvage[i]
                }
            })
            .collect()
    }

    /// Exact expected cost of item `i` when its demand is `N(mean, sd²)`, for `x ≥ 0`.
    pub fn expected_item_cost(&self, i: usize, x: f64, mean: f64, sd: f64) -> f64 {
        let sold = positive_part_mean(mean, sd) - positive_part_mean(mean - x, sd);
        let leftover = positive_part_mean(x - mean, sd);
        self.cost[i] * x - self.price[i] * sold - self.salvage[i] * leftover
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `E[max(0, Y)]` for `Y ~ N(m, sd²)`.
fn positive_part_mean(m: f64, sd: f64) -> f64 {
    let z = m / sd;
    m * std_normal_cdf(z) + sd * std_normal_pdf(z)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    /// `(x - 5)² + 0.5·ξ·x`.
    ShiftedQuadratic,
    /// `(x1 - 1)² + (x2 - 2)² + ξ·(x1 + x2)`.
    LinearExposure,
    /// `(x1 - 1)² + (x2 - 2)² + ξ`.
    AdditiveNoise,
    Newsvendor(NewsvendorParams),
}

impl CostModel {
    pub fn value(&self, x: &[f64], xi: &[f64]) -> f64 {
        match self {
            CostModel::ShiftedQuadratic => (x[0] - 5.0).powi(2) + 0.5 * xi[0] * x[0],
            CostModel::LinearExposure => {
                (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2) + xi[0] * (x[0] + x[1])
            }
            CostModel::AdditiveNoise => (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2) + xi[0],
            CostModel::Newsvendor(p) => p.cost_value(x, xi),
        }
    }

    pub fn gradient(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        match self {
            CostModel::ShiftedQuadratic => vec![2.0 * x[0] - 10.0 + 0.5 * xi[0]],
            CostModel::LinearExposure => {
                vec![2.0 * x[0] - 2.0 + xi[0], 2.0 * x[1] - 4.0 + xi[0]]
            }
            CostModel::AdditiveNoise => vec![2.0 * x[0] - 2.0, 2.0 * x[1] - 4.0],
            CostModel::Newsvendor(p) => p.cost_gradient(x, xi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    QuadIndepUni,
    QuadIndepMulti,
    QuadDepUni,
    QuadDepMulti,
    NewsvendorIndep,
    NewsvendorDep,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: &'static str,
    pub kind: ProblemKind,
    pub cost: CostModel,
    pub family: DensityFamily,
    pub bounds: BoxBounds,
    pub grid_spec: GridSpec,
    pub theta_true: ParamPoint,
    pub x_star: Option<Vec<f64>>,
    /// Initial decision used in the reference experiments.
    pub x_init: Vec<f64>,
    /// Reference batch size `D`.
    pub batch_size: usize,
}

impl ProblemSpec {
    pub fn dim_x(&self) -> usize {
        self.bounds.dim()
    }

    pub fn dim_xi(&self) -> usize {
        self.family.obs_dim()
    }

    pub fn mode(&self) -> Mode {
        if self.family.is_decision_dependent() {
            Mode::Dependent
        } else {
            Mode::Independent
        }
    }

    pub fn cost(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.cost.value(x, xi)
    }

    pub fn grad_cost(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        self.cost.gradient(x, xi)
    }

    pub fn has_analytic_h(&self) -> bool {
        !matches!(self.kind, ProblemKind::NewsvendorIndep | ProblemKind::NewsvendorDep)
    }

    /// Closed-form `H(x, θ) = E_{f(·; x, θ)} h(x, ξ)` where available.
    pub fn analytic_h(&self, x: &[f64], theta: &ParamPoint) -> Option<f64> {
        let t = theta.components()[0];
        match self.kind {
            ProblemKind::QuadIndepUni => Some((x[0] - 5.0).powi(2) + 0.5 * t * x[0]),
            ProblemKind::QuadIndepMulti => {
                Some((x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2) + t * (x[0] + x[1]))
            }
            ProblemKind::QuadDepUni => Some((x[0] - 5.0).powi(2) + 0.5 * (x[0] + t) * x[0]),
            ProblemKind::QuadDepMulti => Some(
                (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2) + (x[0] - x[1]).powi(2) + t,
            ),
            ProblemKind::NewsvendorIndep | ProblemKind::NewsvendorDep => None,
        }
    }

    /// `∇_x H(x, θ)` where the closed form is available.
    pub fn analytic_grad_h(&self, x: &[f64], theta: &ParamPoint) -> Option<Vec<f64>> {
        let t = theta.components()[0];
        match self.kind {
            ProblemKind::QuadIndepUni => Some(vec![2.0 * x[0] - 10.0 + 0.5 * t]),
            ProblemKind::QuadIndepMulti => Some(vec![2.0 * x[0] - 2.0 + t, 2.0 * x[1] - 4.0 + t]),
            ProblemKind::QuadDepUni => Some(vec![3.0 * x[0] - 10.0 + 0.5 * t]),
            ProblemKind::QuadDepMulti => {
                let gap = x[0] - x[1];
                Some(vec![2.0 * (x[0] - 1.0) + 2.0 * gap, 2.0 * (x[1] - 2.0) - 2.0 * gap])
            }
            ProblemKind::NewsvendorIndep | ProblemKind::NewsvendorDep => None,
        }
    }

    /// Newsvendor economics, if this is a newsvendor problem.
    pub fn newsvendor(&self) -> Option<&NewsvendorParams> {
        match &self.cost {
            CostModel::Newsvendor(p) => Some(p),
            _ => None,
        }
    }

    /// Monte Carlo estimate of `H(x)` under the true parameter: `(mean, stderr)`.
    pub fn true_objective_mc<R: Rng + ?Sized>(&self, x: &[f64], n: usize, rng: &mut R) -> Result<(f64, f64)> {
        let prepared = self.family.prepare(&self.theta_true)?;
        let offset = self.family.map().offset(x, self.dim_xi())?;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for k in 0..n {
            let xi = prepared.sample(&offset, rng)?;
            let v = self.cost(x, &xi);
            let delta = v - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (v - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Ok((mean, (var / n as f64).sqrt()))
    }
}

fn synthetic_box(dim: usize) -> BoxBounds {
    BoxBounds::uniform(dim, -50.0, 50.0)
}

pub fn quad_indep_uni() -> ProblemSpec {
    ProblemSpec {
        name: "quad-indep-uni",
        kind: ProblemKind::QuadIndepUni,
        cost: CostModel::ShiftedQuadratic,
        family: DensityFamily::normal_known_var(4.0, DecisionMap::Identity).expect("valid family"),
        bounds: synthetic_box(1),
        grid_spec: GridSpec::integer_range(1, 20),
        theta_true: ParamPoint::scalar(9.0),
        x_star: Some(vec![2.75]),
        x_init: vec![0.0],
        batch_size: 1,
    }
}

pub fn quad_indep_multi() -> ProblemSpec {
    ProblemSpec {
        name: "quad-indep-multi",
        kind: ProblemKind::QuadIndepMulti,
        cost: CostModel::LinearExposure,
        family: DensityFamily::exponential_by_mean(DecisionMap::Identity).expect("valid family"),
        bounds: synthetic_box(2),
        grid_spec: GridSpec::integer_range(1, 20),
        theta_true: ParamPoint::scalar(4.0),
        x_star: Some(vec![-1.0, 0.0]),
        x_init: vec![5.0, 5.0],
        batch_size: 1,
    }
}

pub fn quad_dep_uni() -> ProblemSpec {
    ProblemSpec {
        name: "quad-dep-uni",
        kind: ProblemKind::QuadDepUni,
        cost: CostModel::ShiftedQuadratic,
        family: DensityFamily::normal_known_var(4.0, DecisionMap::AdditiveShift)
            .expect("valid family"),
        bounds: synthetic_box(1),
        grid_spec: GridSpec::integer_range(1, 30),
        theta_true: ParamPoint::scalar(4.0),
        x_star: Some(vec![8.0 / 3.0]),
        x_init: vec![0.0],
        batch_size: 1,
    }
}

pub fn quad_dep_multi() -> ProblemSpec {
    ProblemSpec {
        name: "quad-dep-multi",
        kind: ProblemKind::QuadDepMulti,
        cost: CostModel::AdditiveNoise,
        family: DensityFamily::exponential_by_mean(DecisionMap::QuadraticGap).expect("valid family"),
        bounds: synthetic_box(2),
        grid_spec: GridSpec::integer_range(1, 20),
        theta_true: ParamPoint::scalar(4.0),
        x_star: Some(vec![4.0 / 3.0, 5.0 / 3.0]),
        x_init: vec![5.0, 5.0],
        batch_size: 1,
    }
}

const NV_MEAN: [f64; 3] = [10.0, 15.0, 20.0];
const NV_VAR: [f64; 3] = [3.0, 6.0, 9.0];
const NV_CORR: [f64; 3] = [0.1, 0.3, 0.5];
const NV_ALPHA: f64 = 1.0;
const NV_BETA: f64 = 0.5;

fn newsvendor_params() -> NewsvendorParams {
    NewsvendorParams::new(
        vec![2.0, 4.0, 6.0],
        vec![4.0, 6.0, 8.0],
        vec![1.0, 2.0, 3.0],
        vec![100.0, 100.0, 100.0],
    )
    .expect("valid newsvendor economics")
}

fn newsvendor_grid() -> GridSpec {
    let means = vec![5.0, 10.0, 15.0, 20.0, 25.0];
    let vars = vec![1.0, 3.0, 6.0, 9.0, 12.0];
    let corrs = vec![0.1, 0.2, 0.3, 0.4, 0.5];
    let mut axes = vec![means; 3];
    axes.extend(vec![vars; 3]);
    axes.extend(vec![corrs; 3]);
    GridSpec::Cartesian(axes)
}

pub fn newsvendor(decision_dependent: bool) -> ProblemSpec {
    let params = newsvendor_params();
    let theta: Vec<f64> = NV_MEAN.iter().chain(&NV_VAR).chain(&NV_CORR).copied().collect();
    let (name, kind, map, lo) = if decision_dependent {
        (
            "newsvendor-dep",
            ProblemKind::NewsvendorDep,
            DecisionMap::PowerDemand { alpha: vec![NV_ALPHA; 3], beta: vec![NV_BETA; 3] },
            NEWSVENDOR_DEP_EPS,
        )
    } else {
        ("newsvendor-indep", ProblemKind::NewsvendorIndep, DecisionMap::Identity, 0.0)
    };
    let x_star = if decision_dependent {
        newsvendor_dep_optimum(&params, lo)
    } else {
        newsvendor_indep_optimum(&params)
    };
    ProblemSpec {
        name,
        kind,
        family: DensityFamily::multivariate_normal(3, map).expect("valid family"),
        bounds: BoxBounds::new(vec![lo; 3], params.capacity.clone()).expect("valid box"),
        cost: CostModel::Newsvendor(params),
        grid_spec: newsvendor_grid(),
        theta_true: ParamPoint::new(theta),
        x_star: Some(x_star),
        x_init: vec![15.0, 15.0, 15.0],
        batch_size: 2,
    }
}

/// Root of the per-item stationarity condition
/// `c - p·P(ξ > x) - s·P(ξ < x) = 0` under the true marginals, by bisection.
fn newsvendor_indep_optimum(p: &NewsvendorParams) -> Vec<f64> {
    (0..3)
        .map(|i| {
            let (mean, sd) = (NV_MEAN[i], NV_VAR[i].sqrt());
            let slope = |x: f64| {
                let below = std_normal_cdf((x - mean) / sd);
                p.cost[i] - p.price[i] * (1.0 - below) - p.salvage[i] * below
            };
            bisect(slope, 0.0, p.capacity[i])
        })
        .collect()
}

/// Minimizer of the exact per-item expected cost when demand is
/// `N(μ_i + α·x_i^β, var_i)`. The objective separates across items because
/// `h` is a sum of per-item terms and each depends on one demand marginal.
fn newsvendor_dep_optimum(p: &NewsvendorParams, lo: f64) -> Vec<f64> {
    (0..3)
        .map(|i| {
            let sd = NV_VAR[i].sqrt();
            let objective = |x: f64| {
                p.expected_item_cost(i, x, NV_MEAN[i] + NV_ALPHA * x.powf(NV_BETA), sd)
            };
            minimize_scalar(objective, lo, p.capacity[i])
        })
        .collect()
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Dense scan followed by golden-section refinement around the best cell.
fn minimize_scalar<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    const CELLS: usize = 4000;
    let h = (hi - lo) / CELLS as f64;
    let best = (0..=CELLS)
        .map(|k| lo + h * k as f64)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("nonempty scan");
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    while b - a > 1e-12 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
    }
    0.5 * (a + b)
}

pub fn by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        "quad-indep-uni" => Ok(quad_indep_uni()),
        "quad-indep-multi" => Ok(quad_indep_multi()),
        "quad-dep-uni" => Ok(quad_dep_uni()),
        "quad-dep-multi" => Ok(quad_dep_multi()),
        "newsvendor-indep" => Ok(newsvendor(false)),
        "newsvendor-dep" => Ok(newsvendor(true)),
        other => Err(Error::Config(format!(
            "unknown problem `{other}` (expected one of {})",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}
