//! Line-oriented observation streams.
//!
//! One record per line: `stage | decision | batch`, where the decision is a
//! comma-separated vector and the batch is `;`-separated observation vectors.
//! Blank lines and lines starting with `#` are skipped.
//!
//! ```text
//! # stage | decision | observations
//! 1 | 15,15,15 | 9.8,16.1,21.0; 11.2,14.3,19.9
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub stage: usize,
    /// Decision under which the batch was observed.
    pub decision: Vec<f64>,
    pub batch: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayStream {
    records: Vec<ReplayRecord>,
}

fn parse_vec(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::ReplayParse {
                line,
                message: format!("bad number `{v}`"),
            })
        })
        .collect()
}

fn write_vec(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // Debug formatting is the shortest representation that round-trips.
        let _ = write!(out, "{x:?}");
    }
}

impl ReplayStream {
    /// Records must be numbered 1, 2, 3, ... with consistent dimensions.
    pub fn new(records: Vec<ReplayRecord>) -> Result<Self> {
        for (k, r) in records.iter().enumerate() {
            let line = k + 1;
            if r.stage != k + 1 {
                return Err(Error::ReplayParse {
                    line,
                    message: format!("expected stage {}, found {}", k + 1, r.stage),
                });
            }
            if r.batch.is_empty() {
                return Err(Error::ReplayParse { line, message: "empty batch".into() });
            }
            let first = &records[0];
            if r.decision.len() != first.decision.len()
                || r.batch.iter().any(|y| y.len() != first.batch[0].len())
            {
                return Err(Error::ReplayParse { line, message: "inconsistent dimensions".into() });
            }
        }
        Ok(ReplayStream { records })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = content.split('|').collect();
            if fields.len() != 3 {
                return Err(Error::ReplayParse {
                    line,
                    message: "expected `stage | decision | batch`".into(),
                });
            }
            let stage = fields[0].trim().parse().map_err(|_| Error::ReplayParse {
                line,
                message: format!("bad stage `{}`", fields[0].trim()),
            })?;
            let decision = parse_vec(fields[1], line)?;
            let batch = fields[2]
                .split(';')
                .map(|y| parse_vec(y, line))
                .collect::<Result<Vec<_>>>()?;
            records.push(ReplayRecord { stage, decision, batch });
        }
        Self::new(records)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# stage | decision | observations\n");
        for r in &self.records {
            let _ = write!(out, "{} | ", r.stage);
            write_vec(&mut out, &r.decision);
            out.push_str(" | ");
            for (i, y) in r.batch.iter().enumerate() {
                if i > 0 {
                    out.push_str("; ");
                }
                write_vec(&mut out, y);
            }
            out.push('\n');
        }
        out
    }

    pub fn records(&self) -> &[ReplayRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record for stage `t` (1-based).
    pub fn stage(&self, t: usize) -> Result<&ReplayRecord> {
        t.checked_sub(1)
            .and_then(|i| self.records.get(i))
            .ok_or(Error::ReplayExhausted(t))
    }
}
