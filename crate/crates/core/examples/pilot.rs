//! Pilot runs that fix the acceptance thresholds.
//!
//! Uses seeds disjoint from the ones in `configs/`, which the acceptance
//! checks use. Thresholds printed here are copied into `tests/acceptance.rs`.
//!
//! Rules:
//! - final-error threshold: pilot mean + 4 standard errors, rounded up to two
//!   significant digits;
//! - consistency stage: first stage where the pilot's mean `π_t(θ^c)` reaches
//!   0.95 at `D = 1`, times 1.5, rounded up to a multiple of 50.
//!
//! `cargo run --release --example pilot`

use bayes_sgd::engine::Algorithm;
use bayes_sgd::harness::{run_experiment, ExperimentConfig};
use bayes_sgd::problems::{self, by_name};

const PILOT_SEED: u64 = 7_000;
const REPLICATIONS: usize = 100;

fn round_up_2sig(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor() - 1.0);
    (v / mag).ceil() * mag
}

fn config(name: &str, seed: u64) -> ExperimentConfig {
    let p = by_name(name).expect("known problem");
    ExperimentConfig {
        seed,
        replications: REPLICATIONS,
        algorithms: vec![Algorithm::Bayes, Algorithm::Oracle],
        ..ExperimentConfig::defaults_for(&p)
    }
}

fn main() {
    println!("# final error after T = 2000, {REPLICATIONS} replications");
    for (k, name) in ["quad-indep-uni", "quad-indep-multi", "quad-dep-uni", "quad-dep-multi"]
        .iter()
        .enumerate()
    {
        let exp = run_experiment(&config(name, PILOT_SEED + k as u64)).expect("pilot run");
        let bayes = &exp.stats[0];
        let oracle = &exp.stats[1];
        let (mean, std) = bayes.final_err.expect("optimum known");
        let se = std / (bayes.replications as f64).sqrt();
        let worst_gap = (0..100)
            .map(|i| oracle.stages[i].mean_err.unwrap() - bayes.stages[i].mean_err.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let (omean, _) = oracle.final_err.unwrap();
        println!(
            "{name}: bayes mean {mean:.5} se {se:.5} threshold {:.3} | oracle mean {omean:.5} | max_(t<=100) oracle-bayes {worst_gap:.3e}",
            round_up_2sig(mean + 4.0 * se)
        );
    }

    println!("# posterior consistency, quad-dep-uni");
    let p = problems::quad_dep_uni();
    for d in [1usize, 5] {
        let cfg = ExperimentConfig {
            batch: d,
            seed: PILOT_SEED + 10 + d as u64,
            replications: REPLICATIONS,
            diagnostic_stride: 10,
            ..ExperimentConfig::defaults_for(&p)
        };
        let exp = run_experiment(&cfg).expect("pilot run");
        let s = &exp.stats[0];
        let reach = s.stages.iter().find(|r| r.mean_mass_true.unwrap() >= 0.95).map(|r| r.t);
        let d10 = s.stages[9].mean_dt.unwrap();
        let d_last = s.stages.iter().rev().find_map(|r| r.mean_dt).unwrap();
        let stage = reach.map(|t| ((t as f64 * 1.5 / 50.0).ceil() * 50.0) as usize);
        println!(
            "D={d}: mass@200 {:.4} first >=0.95 at {reach:?} -> stage threshold {stage:?} | d_10 {d10:.4e} d_T {d_last:.4e}",
            s.stages[199].mean_mass_true.unwrap()
        );
    }
}
