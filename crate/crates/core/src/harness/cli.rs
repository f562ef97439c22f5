//! Command-line front end. Exit codes: 0 success, 1 failed run or check,
//! 2 configuration or usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::grid::ParameterGrid;
use crate::harness::config::ExperimentConfig;
use crate::harness::output::write_experiment;
use crate::harness::runner::run_experiment;
use crate::problems::{self, PROBLEM_NAMES};
use crate::validators;

#[derive(Debug, Parser)]
#[command(name = "bayes-sgd", version, about = "Bayesian-SGD experiments and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write one CSV per algorithm.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the self-check suite and print a report.
    Validate {
        /// Keep checks whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the available problem names.
    ListProblems,
    /// Print a problem's box, true parameter, grid size and optimum.
    Describe { problem: String },
}

const EXIT_FAILED: i32 = 1;
const EXIT_CONFIG: i32 = 2;

fn code_for(e: &Error) -> i32 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_FAILED
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run { config, out: dir, seed, replications, threads } => {
            cmd_run(config, dir, seed, replications, threads, out)
        }
        Command::Validate { filter, seed, report } => cmd_validate(filter, seed, report, out),
        Command::ListProblems => {
            for name in PROBLEM_NAMES {
                let _ = writeln!(out, "{name}");
            }
            Ok(0)
        }
        Command::Describe { problem } => cmd_describe(&problem, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            code_for(&e)
        }
    }
}

fn cmd_run(
    config: PathBuf,
    dir: Option<PathBuf>,
    seed: Option<u64>,
    replications: Option<usize>,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> crate::Result<i32> {
    let mut cfg = ExperimentConfig::from_path(&config)?;
    if let Some(d) = dir {
        cfg.output = d;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    let exp = run_experiment(&cfg)?;
    for w in &exp.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let paths = write_experiment(&exp, &cfg.output)?;
    for (s, path) in exp.stats.iter().zip(&paths) {
        let final_err = match s.final_err {
            Some((m, sd)) => format!("{m:.6} (std {sd:.6})"),
            None => "n/a".into(),
        };
        let _ = writeln!(
            out,
            "{}: replications={} aborted={} final_err={} max_grad_norm={:.4e} -> {}",
            s.algorithm,
            s.replications,
            s.aborted,
            final_err,
            s.max_grad_norm,
            path.display()
        );
    }
    Ok(0)
}

fn cmd_validate(
    filter: Option<String>,
    seed: u64,
    report: Option<PathBuf>,
    out: &mut dyn Write,
) -> crate::Result<i32> {
    let reports = validators::default_suite(seed, filter.as_deref())?;
    if reports.is_empty() {
        return Err(Error::Config(format!("no checks match `{}`", filter.unwrap_or_default())));
    }
    let text: Vec<String> = reports.iter().map(|r| r.to_string()).collect();
    let text = text.join("\n");
    let _ = write!(out, "{text}");
    if let Some(path) = report {
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    let failed = reports.iter().filter(|r| r.gated && !r.pass).count();
    let _ = writeln!(out, "\n# {} checks, {failed} gated failures", reports.len());
    Ok(if failed > 0 { EXIT_FAILED } else { 0 })
}

fn cmd_describe(name: &str, out: &mut dyn Write) -> crate::Result<i32> {
    let p = problems::by_name(name)?;
    let grid = ParameterGrid::from_spec(&p.grid_spec, &p.family, Some(&p.theta_true))?;
    let _ = writeln!(out, "problem: {}", p.name);
    let _ = writeln!(out, "mode: {}", p.mode().as_str());
    let _ = writeln!(out, "box: lo={:?} hi={:?}", p.bounds.lo, p.bounds.hi);
    let _ = writeln!(out, "theta_true: {:?}", p.theta_true.components());
    let _ = writeln!(
        out,
        "grid: {} points ({} listed, {} excluded)",
        grid.len(),
        p.grid_spec.len(),
        grid.support().excluded()
    );
    match &p.x_star {
        Some(x) => writeln!(out, "x_star: {x:?}"),
        None => writeln!(out, "x_star: unknown"),
    }
    .ok();
    let _ = writeln!(out, "x_init: {:?}", p.x_init);
    let _ = writeln!(out, "batch D: {}", p.batch_size);
    let _ = writeln!(out, "default T: {}", crate::engine::default_horizon(&p));
    Ok(0)
}
