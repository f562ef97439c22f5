use std::path::PathBuf;
use std::process::Command;

use bayes_sgd::dist::FamilyKind;
use bayes_sgd::engine::Algorithm;
use bayes_sgd::grid::{GridSpec, ParameterGrid};
use bayes_sgd::harness::runner::{aggregate, run_algorithm};
use bayes_sgd::harness::{run_experiment, ExperimentConfig};
use bayes_sgd::problems::CostModel;
use bayes_sgd::{DataSource, DecisionMap, StepSchedule};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join(format!("{name}.conf"))).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bayes-sgd"))
}

#[test]
fn shipped_configs_carry_reference_parameters() {
    let reference = StepSchedule::HarmonicShift { a: 2.0, c: 5.0 };
    let table: [(&str, f64, usize, Vec<f64>, usize); 4] = [
        ("quad-indep-uni", 9.0, 20, vec![0.0], 1),
        ("quad-indep-multi", 4.0, 20, vec![5.0, 5.0], 1),
        ("quad-dep-uni", 4.0, 30, vec![0.0], 1),
        ("quad-dep-multi", 4.0, 20, vec![5.0, 5.0], 1),
    ];
    for (name, theta, grid_max, x1, d) in table {
        let cfg = shipped(name);
        let p = cfg.problem_spec().unwrap();
        assert_eq!((cfg.batch, cfg.inner, cfg.schedule), (d, 1, reference), "{name}");
        assert_eq!(cfg.x_init, x1);
        assert_eq!(cfg.replications, 100);
        assert_eq!(p.theta_true.components(), [theta]);
        assert_eq!(p.grid_spec, GridSpec::integer_range(1, grid_max as i64));
        if let FamilyKind::NormalKnownVar { sigma } = p.family.kind() {
            assert_eq!(sigma, 4.0);
        }
    }
    for name in ["newsvendor-indep", "newsvendor-dep"] {
        let cfg = shipped(name);
        let p = cfg.problem_spec().unwrap();
        assert_eq!((cfg.batch, cfg.inner, cfg.schedule, cfg.horizon), (2, 1, reference, 1000));
        assert_eq!(cfg.x_init, vec![15.0, 15.0, 15.0]);
        assert_eq!(cfg.replications, 20);
        let CostModel::Newsvendor(nv) = &p.cost else { panic!("newsvendor cost") };
        assert_eq!(nv.cost, [2.0, 4.0, 6.0]);
        assert_eq!(nv.price, [4.0, 6.0, 8.0]);
        assert_eq!(nv.salvage, [1.0, 2.0, 3.0]);
        assert_eq!(nv.capacity, [100.0, 100.0, 100.0]);
        assert_eq!(p.theta_true.components(), [10.0, 15.0, 20.0, 3.0, 6.0, 9.0, 0.1, 0.3, 0.5]);
        let GridSpec::Cartesian(axes) = &p.grid_spec else { panic!("cartesian grid") };
        assert_eq!(axes[0], [5.0, 10.0, 15.0, 20.0, 25.0]);
        assert_eq!(axes[3], [1.0, 3.0, 6.0, 9.0, 12.0]);
        assert_eq!(axes[6], [0.1, 0.2, 0.3, 0.4, 0.5]);
        if name == "newsvendor-dep" {
            assert_eq!(
                p.family.map(),
                &DecisionMap::PowerDemand { alpha: vec![1.0; 3], beta: vec![0.5; 3] }
            );
        }
    }
}

#[test]
fn streamed_aggregation_matches_two_pass() {
    let cfg = ExperimentConfig { horizon: 300, replications: 25, diagnostic_stride: 20, ..shipped("quad-dep-multi") };
    let p = cfg.problem_spec().unwrap();
    let support = ParameterGrid::from_spec(&p.grid_spec, &p.family, Some(&p.theta_true)).unwrap().support().clone();
    let runs = run_algorithm(&cfg, &p, &support, &DataSource::Synthetic, Algorithm::Bayes).runs;
    let stats = aggregate(&p, Algorithm::Bayes, &runs, 0);
    let r = runs.len() as f64;
    for (i, row) in stats.stages.iter().enumerate() {
        let errs: Vec<f64> = runs.iter().map(|t| t.stages[i].error.unwrap()).collect();
        let mean = errs.iter().sum::<f64>() / r;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / r).sqrt();
        let mass: Vec<f64> = runs.iter().map(|t| t.stages[i].mass_true.unwrap()).collect();
        let mmean = mass.iter().sum::<f64>() / r;
        let mstd = (mass.iter().map(|e| (e - mmean).powi(2)).sum::<f64>() / r).sqrt();
        assert!((row.mean_err.unwrap() - mean).abs() < 1e-12);
        assert!((row.std_err.unwrap() - std).abs() < 1e-12);
        assert!((row.mean_mass_true.unwrap() - mmean).abs() < 1e-12);
        assert!((row.ci_mass_true.unwrap() - 1.96 * mstd / r.sqrt()).abs() < 1e-12);
        if (i + 1) % 20 == 0 {
            let dt = runs.iter().map(|t| t.stages[i].d_t.unwrap()).sum::<f64>() / r;
            assert!((row.mean_dt.unwrap() - dt).abs() < 1e-12);
        } else {
            assert!(row.mean_dt.is_none());
        }
    }
}

#[test]
fn synthetic_problems_converge_with_reference_settings() {
    for name in ["quad-indep-uni", "quad-indep-multi", "quad-dep-uni", "quad-dep-multi"] {
        let cfg = ExperimentConfig { algorithms: vec![Algorithm::Bayes], diagnostic_stride: 0, ..shipped(name) };
        let s = run_experiment(&cfg).unwrap().stats.remove(0);
        let e10 = s.stages[9].mean_err.unwrap();
        let e_t = s.stages.last().unwrap().mean_err.unwrap();
        assert!(e_t * 5.0 <= e10, "{name}: {e10} -> {e_t}");
    }
}

#[test]
fn divergence_falls_between_early_and_later_stages() {
    let cfg = ExperimentConfig { horizon: 200, algorithms: vec![Algorithm::Bayes], ..shipped("quad-indep-uni") };
    let s = run_experiment(&cfg).unwrap().stats.remove(0);
    let (d10, d200) = (s.stages[9].mean_dt.unwrap(), s.stages[199].mean_dt.unwrap());
    assert!(d200 < d10, "{d10} -> {d200}");
}

#[test]
fn cli_lists_problems() {
    let out = bin().arg("list-problems").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().any(|l| l == "newsvendor-dep"));
}

#[test]
fn cli_missing_config_exits_2() {
    let out = bin().args(["run", "--config", "/definitely/not/here.conf"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("/definitely/not/here.conf"));
}

#[test]
fn cli_bad_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "problem = quad-dep-uni\nreplicatons = 3\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("unknown key `replicatons`"));
}

#[test]
fn cli_run_is_byte_reproducible_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    std::fs::write(
        &conf,
        "problem = quad-indep-uni\nalgorithms = bayes, oracle, mle\nT = 120\nreplications = 500\n\
         diagnostic_stride = 30\noutput = unused\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("out{k}"));
        let out = bin()
            .args(["run", "--config"])
            .arg(&conf)
            .arg("--out")
            .arg(&out_dir)
            .args(["--replications", "12", "--seed", "5", "--threads", threads])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8(out.stdout).unwrap().contains("replications=12"));
        outputs.push(out_dir);
    }
    assert!(!dir.path().join("unused").exists());
    for alg in ["bayes", "oracle", "mle"] {
        let file = format!("quad-indep-uni-{alg}.csv");
        let a = std::fs::read(outputs[0].join(&file)).unwrap();
        let b = std::fs::read(outputs[1].join(&file)).unwrap();
        assert_eq!(a, b, "{file}");
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 121);
    }
}

#[test]
fn cli_validate_exit_status() {
    let out = bin().args(["validate", "--filter", "posterior_equivalence"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("name=posterior_equivalence").count(), 4);
    assert!(text.contains("seed=0"));
}
