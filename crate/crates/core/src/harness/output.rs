//! CSV series, one file per algorithm.
//!
//! Columns: `t, mean_err, std_err, mean_mass_true, ci_mass_true, mean_dt`.
//! Numbers carry 17 significant digits; absent values are empty cells.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::runner::{Experiment, ReplicationStats};

pub const HEADER: [&str; 6] = ["t", "mean_err", "std_err", "mean_mass_true", "ci_mass_true", "mean_dt"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_csv(stats: &ReplicationStats, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
    for s in &stats.stages {
        w.write_record([
            s.t.to_string(),
            cell(s.mean_err),
            cell(s.std_err),
            cell(s.mean_mass_true),
            cell(s.ci_mass_true),
            cell(s.mean_dt),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn csv_path(dir: &Path, stats: &ReplicationStats) -> PathBuf {
    dir.join(format!("{}-{}.csv", stats.problem, stats.algorithm))
}

/// Writes every series into `dir`, creating it if needed.
pub fn write_experiment(exp: &Experiment, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    exp.stats
        .iter()
        .map(|s| {
            let path = csv_path(dir, s);
            write_csv(s, &path)?;
            Ok(path)
        })
        .collect()
}
