//! Self-checks behind `longvit verify`: each suite compares a fast path with
//! an independent reference and reports the worst deviation.

mod gradcheck;
mod oracles;
mod suites;

use std::fmt;
use std::str::FromStr;

pub use gradcheck::{check_graph, check_model, relative_error, GradReport, FD_STEP};
pub use oracles::{auc_by_pairs, c_index_by_pairs, random_schedule};
pub use suites::{
    attention_suite, distributed_suite, gradients_suite, metrics_suite, tiny_gradcheck_model,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Attention,
    Distributed,
    Gradients,
    Metrics,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Attention,
        Suite::Distributed,
        Suite::Gradients,
        Suite::Metrics,
    ];

    pub fn run(self, seed: u64) -> Result<SuiteReport> {
        match self {
            Suite::Attention => attention_suite(seed),
            Suite::Distributed => distributed_suite(seed),
            Suite::Gradients => gradients_suite(seed),
            Suite::Metrics => metrics_suite(seed),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Suite::Attention),
            "distributed" => Ok(Suite::Distributed),
            "gradients" => Ok(Suite::Gradients),
            "metrics" => Ok(Suite::Metrics),
            other => Err(Error::config(format!(
                "unknown suite {other:?} (attention, distributed, gradients, metrics)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Attention => "attention",
            Suite::Distributed => "distributed",
            Suite::Gradients => "gradients",
            Suite::Metrics => "metrics",
        })
    }
}

/// One compared quantity: `deviation` must not exceed `tolerance`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub deviation: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, cases: usize, deviation: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            cases,
            deviation,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.deviation <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({} cases): max deviation {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.deviation,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {c}", self.suite)?;
        }
        let passed = self.checks.iter().filter(|c| c.passed()).count();
        write!(
            f,
            "[{}] {passed}/{} checks passed",
            self.suite,
            self.checks.len()
        )
    }
}
