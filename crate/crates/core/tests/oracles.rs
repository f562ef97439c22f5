//! Implementation-independent reference computations: densities written out
//! by hand, Bayes' rule applied to the whole history at once.

use bayes_sgd::engine::{grad_estimate_dep, grad_estimate_indep, run_observed, DataSource, RunConfig};
use bayes_sgd::problems::{self, ProblemSpec};
use bayes_sgd::ParameterGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIGMA: f64 = 4.0;

fn normal_pdf(y: f64, mean: f64) -> f64 {
    (-0.5 * ((y - mean) / SIGMA).powi(2)).exp() / (SIGMA * (2.0 * std::f64::consts::PI).sqrt())
}

fn exp_pdf(y: f64, mean: f64) -> f64 {
    if y < 0.0 {
        0.0
    } else {
        (-y / mean).exp() / mean
    }
}

/// Log-density under the problem's family, written out directly.
fn log_density(problem: &ProblemSpec, y: f64, x: &[f64], theta: f64) -> f64 {
    match problem.name {
        "quad-indep-uni" => normal_pdf(y, theta).ln(),
        "quad-dep-uni" => normal_pdf(y, x[0] + theta).ln(),
        "quad-indep-multi" => exp_pdf(y, theta).ln(),
        "quad-dep-multi" => exp_pdf(y, (x[0] - x[1]).powi(2) + theta).ln(),
        other => panic!("no reference density for {other}"),
    }
}

fn thetas(problem: &ProblemSpec) -> Vec<f64> {
    let n = if problem.name == "quad-dep-uni" { 30 } else { 20 };
    (1..=n).map(f64::from).collect()
}

/// Posterior from scratch: uniform prior times the product of all likelihoods.
fn direct_posterior(problem: &ProblemSpec, history: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let ths = thetas(problem);
    let logw: Vec<f64> = ths
        .iter()
        .map(|th| history.iter().map(|(x, ys)| ys.iter().map(|y| log_density(problem, *y, x, *th)).sum::<f64>()).sum())
        .collect();
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logw.iter().map(|l| (l - m).exp()).sum();
    logw.iter().map(|l| (l - m).exp() / z).collect()
}

#[test]
fn streamed_posterior_matches_direct_bayes_along_runs() {
    for name in ["quad-indep-uni", "quad-indep-multi", "quad-dep-uni", "quad-dep-multi"] {
        let p = problems::by_name(name).unwrap();
        let cfg = RunConfig { horizon: 300, seed: 17, batch: 2, ..RunConfig::defaults_for(&p) };
        let grid = ParameterGrid::from_spec(&p.grid_spec, &p.family, Some(&p.theta_true)).unwrap();
        let mut history = Vec::new();
        let mut worst: f64 = 0.0;
        run_observed(&p, grid, &cfg, &DataSource::Synthetic, &mut |v| {
            history.push((v.decision.to_vec(), v.batch.iter().map(|y| y[0]).collect::<Vec<f64>>()));
            if v.t % 25 == 0 {
                let direct = direct_posterior(&p, &history);
                for (a, b) in v.grid.unwrap().probabilities().iter().zip(&direct) {
                    if *b > 1e-250 {
                        worst = worst.max((a - b).abs() / b);
                    }
                }
            }
        })
        .unwrap();
        assert!(worst < 1e-9, "{name}: {worst:e}");
    }
}

#[test]
fn mixture_score_matches_hand_formula() {
    // quad-dep-uni: d/dx log Σ π_i φ(y; x + θ_i) = Σ w_i (y - x - θ_i) / σ², w ∝ π_i φ_i.
    let p = problems::quad_dep_uni();
    let weights: Vec<f64> = (0..30).map(|i| -((i as f64 - 6.0).powi(2)) / 20.0).collect();
    let grid = ParameterGrid::from_spec(&p.grid_spec, &p.family, None).unwrap().with_log_posterior(&weights).unwrap();
    let z: f64 = weights.iter().map(|w| w.exp()).sum();
    for (x, y) in [(0.0, 3.0), (2.5, 14.0), (-4.0, -9.0), (7.0, 40.0)] {
        let comp: Vec<f64> = (0..30).map(|i| weights[i].exp() / z * normal_pdf(y, x + (i + 1) as f64)).collect();
        let total: f64 = comp.iter().sum();
        let score: f64 = comp
            .iter()
            .enumerate()
            .map(|(i, c)| c / total * (y - x - (i + 1) as f64) / (SIGMA * SIGMA))
            .sum();
        let got = grid.mixture_score(&[y], &[x]).unwrap()[0];
        assert!((got - score).abs() < 1e-12 * score.abs().max(1.0), "{got} vs {score}");
        let got = grid.mixture_log_density(&[y], &[x]).unwrap();
        assert!((got - total.ln()).abs() < 1e-12 * total.ln().abs(), "{got} vs {}", total.ln());
    }
}

#[test]
fn estimator_means_match_closed_form_gradients() {
    // Uniform posterior; closed-form targets worked by hand:
    //   quad-indep-uni at x = 1: 2x - 10 + 0.5·mean(θ) = -8 + 5.25 = -2.75
    //   quad-dep-uni at x = 2:   3x - 10 + 0.5·mean(θ) = -4 + 7.75 = 3.75
    let n = 400_000;
    let cases: [(&str, f64, f64, bool); 2] = [("quad-indep-uni", 1.0, -2.75, false), ("quad-dep-uni", 2.0, 3.75, true)];
    for (name, x, target, dep) in cases {
        let p = problems::by_name(name).unwrap();
        let grid = ParameterGrid::from_spec(&p.grid_spec, &p.family, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                if dep {
                    grad_estimate_dep(&p, &grid, &[x], &mut rng).unwrap()[0]
                } else {
                    grad_estimate_indep(&p, &grid, &[x], &mut rng).unwrap()[0]
                }
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((mean - target).abs() < 4.0 * se, "{name}: {mean} vs {target} (se {se})");
    }
}
