//! Step-size schedules indexed by the global SGD step counter.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `a / (t + c)`.
    HarmonicShift { a: f64, c: f64 },
    /// `a / √horizon`, constant in `t`.
    ConstOverSqrtT { a: f64, horizon: usize },
    /// `a / t`.
    InvT { a: f64 },
    /// `a / √t`.
    InvSqrtT { a: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::HarmonicShift { a: 2.0, c: 5.0 }
    }
}

impl StepSchedule {
    pub fn scale(&self) -> f64 {
        match *self {
            StepSchedule::HarmonicShift { a, .. }
            | StepSchedule::ConstOverSqrtT { a, .. }
            | StepSchedule::InvT { a }
            | StepSchedule::InvSqrtT { a } => a,
        }
    }

    /// `a = 0` is accepted and freezes the iterate.
    pub fn validate(&self) -> Result<()> {
        let a = self.scale();
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::Config(format!("step scale must be finite and >= 0, got {a}")));
        }
        match *self {
            StepSchedule::HarmonicShift { c, .. } if !(c.is_finite() && c > -1.0) => {
                Err(Error::Config(format!("harmonic shift must exceed -1, got {c}")))
            }
            StepSchedule::ConstOverSqrtT { horizon: 0, .. } => {
                Err(Error::Config("constant-step horizon must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Step for global index `t ≥ 1`.
    pub fn step_at(&self, t: usize) -> f64 {
        debug_assert!(t >= 1, "step index starts at 1");
        let tf = t as f64;
        match *self {
            StepSchedule::HarmonicShift { a, c } => a / (tf + c),
            StepSchedule::ConstOverSqrtT { a, horizon } => a / (horizon as f64).sqrt(),
            StepSchedule::InvT { a } => a / tf,
            StepSchedule::InvSqrtT { a } => a / tf.sqrt(),
        }
    }
}

/// Text form used in config files: `harmonic:a,c`, `const-sqrt:a,T`, `inv:a`, `inv-sqrt:a`.
impl FromStr for StepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad schedule `{s}`"));
        let (kind, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let nums: Vec<&str> = args.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            nums.get(i).and_then(|v| v.parse().ok()).ok_or_else(bad)
        };
        let schedule = match (kind.trim(), nums.len()) {
            ("harmonic", 2) => StepSchedule::HarmonicShift { a: num(0)?, c: num(1)? },
            ("const-sqrt", 2) => StepSchedule::ConstOverSqrtT {
                a: num(0)?,
                horizon: nums[1].parse().map_err(|_| bad())?,
            },
            ("inv", 1) => StepSchedule::InvT { a: num(0)? },
            ("inv-sqrt", 1) => StepSchedule::InvSqrtT { a: num(0)? },
            _ => return Err(bad()),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepSchedule::HarmonicShift { a, c } => write!(f, "harmonic:{a},{c}"),
            StepSchedule::ConstOverSqrtT { a, horizon } => write!(f, "const-sqrt:{a},{horizon}"),
            StepSchedule::InvT { a } => write!(f, "inv:{a}"),
            StepSchedule::InvSqrtT { a } => write!(f, "inv-sqrt:{a}"),
        }
    }
}
