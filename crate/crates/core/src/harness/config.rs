//! Experiment configuration files.
//!
//! Flat `key = value` lines; `#` starts a comment. Keys:
//!
//! | key                 | value                                   | default                 |
//! |---------------------|-----------------------------------------|-------------------------|
//! | `problem`           | one of the problem names (required)     |                         |
//! | `algorithms`        | comma list from `bayes, oracle, mle`    | `bayes`                 |
//! | `T`                 | stages                                  | 2000 (newsvendor 1000)  |
//! | `K`                 | SGD iterations per stage                | 1                       |
//! | `D`                 | observations per stage                  | problem's               |
//! | `schedule`          | `harmonic:a,c`, `const-sqrt:a,T`, `inv:a`, `inv-sqrt:a` | `harmonic:2,5` |
//! | `x_init`            | comma list                              | problem's               |
//! | `seed`              | unsigned integer                        | 0                       |
//! | `replications`      | `≥ 1`                                   | 100                     |
//! | `diagnostic_stride` | stages between `d_t` evaluations, 0 off | 0                       |
//! | `output`            | directory for CSV files                 | `results`               |
//! | `threads`           | worker threads, 0 = all cores           | 0                       |
//! | `replay`            | observation stream file                 | synthetic data          |
//!
//! Unknown or repeated keys are errors.

use std::path::{Path, PathBuf};

use crate::engine::{Algorithm, RunConfig};
use crate::error::{Error, Result};
use crate::problems::{self, ProblemSpec};
use crate::schedule::StepSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub algorithms: Vec<Algorithm>,
    pub horizon: usize,
    pub inner: usize,
    pub batch: usize,
    pub schedule: StepSchedule,
    pub x_init: Vec<f64>,
    pub seed: u64,
    pub replications: usize,
    pub diagnostic_stride: usize,
    pub output: PathBuf,
    pub threads: usize,
    pub replay: Option<PathBuf>,
}

const KEYS: [&str; 13] = [
    "problem",
    "algorithms",
    "T",
    "K",
    "D",
    "schedule",
    "x_init",
    "seed",
    "replications",
    "diagnostic_stride",
    "output",
    "threads",
    "replay",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("bad number `{v}` in `x_init`")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Reference settings for a problem.
    pub fn defaults_for(problem: &ProblemSpec) -> Self {
        let run = RunConfig::defaults_for(problem);
        ExperimentConfig {
            problem: problem.name.to_string(),
            algorithms: vec![Algorithm::Bayes],
            horizon: run.horizon,
            inner: run.inner,
            batch: run.batch,
            schedule: run.schedule,
            x_init: run.x_init,
            seed: 0,
            replications: 100,
            diagnostic_stride: 0,
            output: PathBuf::from("results"),
            threads: 0,
            replay: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(&str, &str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
            }
            if pairs.iter().any(|(k, _, _)| *k == key) {
                return Err(Error::Config(format!("line {line}: `{key}` given twice")));
            }
            pairs.push((key, value, line));
        }
        let problem_name = pairs
            .iter()
            .find(|(k, _, _)| *k == "problem")
            .map(|(_, v, _)| *v)
            .ok_or_else(|| Error::Config("missing required key `problem`".into()))?;
        let problem = problems::by_name(problem_name)?;
        let mut cfg = Self::defaults_for(&problem);
        for (key, value, line) in pairs {
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {line}: {m}")),
                other => other,
            };
            match key {
                "problem" => {}
                "algorithms" => {
                    cfg.algorithms = value
                        .split(',')
                        .map(|a| a.trim().parse::<Algorithm>())
                        .collect::<Result<_>>()
                        .map_err(at)?;
                }
                "T" => cfg.horizon = parse_num(key, value).map_err(at)?,
                "K" => cfg.inner = parse_num(key, value).map_err(at)?,
                "D" => cfg.batch = parse_num(key, value).map_err(at)?,
                "schedule" => cfg.schedule = value.parse().map_err(at)?,
                "x_init" => cfg.x_init = parse_list(value).map_err(at)?,
                "seed" => cfg.seed = parse_num(key, value).map_err(at)?,
                "replications" => cfg.replications = parse_num(key, value).map_err(at)?,
                "diagnostic_stride" => cfg.diagnostic_stride = parse_num(key, value).map_err(at)?,
                "output" => cfg.output = PathBuf::from(value),
                "threads" => cfg.threads = parse_num(key, value).map_err(at)?,
                "replay" => cfg.replay = Some(PathBuf::from(value)),
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        problems::by_name(&self.problem)
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem_spec()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return Err(Error::Config(format!("algorithm `{a}` listed twice")));
            }
        }
        self.run_config(&problem, 0).validate(&problem)
    }

    /// Engine settings for replication `r`.
    pub fn run_config(&self, problem: &ProblemSpec, replication: u64) -> RunConfig {
        RunConfig {
            horizon: self.horizon,
            inner: self.inner,
            batch: self.batch,
            schedule: self.schedule,
            x_init: self.x_init.clone(),
            seed: self.seed,
            replication,
            mode: problem.mode(),
            diagnostic_stride: self.diagnostic_stride,
        }
    }

    /// Rendered in the file format; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let algorithms: Vec<&str> = self.algorithms.iter().map(|a| a.name()).collect();
        let x_init: Vec<String> = self.x_init.iter().map(|v| format!("{v:?}")).collect();
        let mut out = format!(
            "problem = {}\nalgorithms = {}\nT = {}\nK = {}\nD = {}\nschedule = {}\nx_init = {}\n\
             seed = {}\nreplications = {}\ndiagnostic_stride = {}\noutput = {}\nthreads = {}\n",
            self.problem,
            algorithms.join(", "),
            self.horizon,
            self.inner,
            self.batch,
            self.schedule,
            x_init.join(", "),
            self.seed,
            self.replications,
            self.diagnostic_stride,
            self.output.display(),
            self.threads,
        );
        if let Some(r) = &self.replay {
            out.push_str(&format!("replay = {}\n", r.display()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_problem_defaults() {
        let cfg = ExperimentConfig::parse("problem = quad-indep-multi\n").unwrap();
        assert_eq!(cfg.x_init, vec![5.0, 5.0]);
        assert_eq!(cfg.horizon, 2000);
        assert_eq!(cfg.batch, 1);
        assert_eq!(cfg.schedule, StepSchedule::HarmonicShift { a: 2.0, c: 5.0 });
        let cfg = ExperimentConfig::parse("problem = newsvendor-dep").unwrap();
        assert_eq!(cfg.horizon, 1000);
        assert_eq!(cfg.batch, 2);
    }

    #[test]
    fn all_keys() {
        let text = "# comment\n\
            problem = quad-indep-uni   # trailing\n\
            algorithms = bayes, oracle,mle\n\
            T = 50\nK = 3\nD = 4\n\
            schedule = inv-sqrt:0.5\n\
            x_init = 1.5\n\
            seed = 99\nreplications = 7\ndiagnostic_stride = 10\n\
            output = out/dir\nthreads = 2\nreplay = data.txt\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.algorithms, vec![Algorithm::Bayes, Algorithm::Oracle, Algorithm::Mle]);
        assert_eq!((cfg.horizon, cfg.inner, cfg.batch), (50, 3, 4));
        assert_eq!(cfg.schedule, StepSchedule::InvSqrtT { a: 0.5 });
        assert_eq!(cfg.x_init, vec![1.5]);
        assert_eq!((cfg.seed, cfg.replications, cfg.diagnostic_stride, cfg.threads), (99, 7, 10, 2));
        assert_eq!(cfg.output, PathBuf::from("out/dir"));
        assert_eq!(cfg.replay, Some(PathBuf::from("data.txt")));
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "",
            "problem = nope",
            "problem = quad-indep-uni\nTT = 3",
            "problem = quad-indep-uni\nT = 3\nT = 4",
            "problem = quad-indep-uni\nT = -3",
            "problem = quad-indep-uni\nT = 0",
            "problem = quad-indep-uni\nreplications = 0",
            "problem = quad-indep-uni\nx_init = 1, 2",
            "problem = quad-indep-uni\nalgorithms = bayes, sgd",
            "problem = quad-indep-uni\nalgorithms = bayes, bayes",
            "problem = quad-indep-uni\nschedule = harmonic:1",
            "problem = quad-indep-uni\njust words",
            "problem = newsvendor-indep\nx_init = 15, 15, 150",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(err.is_config_error(), "{text:?} gave {err:?}");
        }
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ExperimentConfig::parse("problem = quad-dep-uni\n\nstride = 4\n").unwrap_err();
        assert_eq!(err, Error::Config("line 3: unknown key `stride`".into()));
    }

    #[test]
    fn missing_file_names_path() {
        let err = ExperimentConfig::from_path(Path::new("/no/such/file.conf")).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("/no/such/file.conf"));
    }
}
