//! Uniform test output and the Monte Carlo p-value convention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    #[default]
    Upper,
    TwoSided,
}

impl Sidedness {
    /// Whether a resampled statistic counts toward the p-value. Ties count.
    pub fn at_least_as_extreme(self, draw: f64, observed: f64) -> bool {
        match self {
            Sidedness::Upper => draw >= observed,
            Sidedness::TwoSided => draw.abs() >= observed.abs(),
        }
    }
}

impl FromStr for Sidedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "upper" | "one-sided" => Ok(Sidedness::Upper),
            "two-sided" | "two" | "both" => Ok(Sidedness::TwoSided),
            other => Err(Error::InvalidInput(format!("unknown sidedness '{other}' (expected upper or two-sided)"))),
        }
    }
}

impl fmt::Display for Sidedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sidedness::Upper => "upper",
            Sidedness::TwoSided => "two-sided",
        })
    }
}

/// Draw count, sidedness and master seed of a Monte Carlo test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McOptions {
    pub draws: usize,
    pub sidedness: Sidedness,
    pub seed: u64,
}

impl McOptions {
    pub fn new(draws: usize, seed: u64) -> Self {
        McOptions { draws, sidedness: Sidedness::Upper, seed }
    }

    pub fn two_sided(mut self) -> Self {
        self.sidedness = Sidedness::TwoSided;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    /// Serialized as `null` when infinite.
    pub statistic_obs: f64,
    pub p_value: f64,
    pub draws: usize,
    pub sidedness: Sidedness,
    pub focal_count: usize,
    pub sections_used: usize,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate_reason: Option<String>,
    pub seed: u64,
    pub version: String,
}

impl TestReport {
    pub fn new(test: &str, statistic_obs: f64, count: usize, opts: &McOptions) -> Self {
        TestReport {
            test: test.to_string(),
            statistic_obs,
            p_value: mc_p_value(count, opts.draws),
            draws: opts.draws,
            sidedness: opts.sidedness,
            focal_count: 0,
            sections_used: 0,
            degenerate: false,
            degenerate_reason: None,
            seed: opts.seed,
            version: VERSION.to_string(),
        }
    }

    /// p = 1 with the reason recorded.
    pub fn degenerate(test: &str, reason: impl Into<String>, opts: &McOptions) -> Self {
        let mut r = TestReport::new(test, 0.0, opts.draws, opts);
        r.degenerate = true;
        r.degenerate_reason = Some(reason.into());
        r
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// `(count + 1) / (draws + 1)`.
pub fn mc_p_value(count: usize, draws: usize) -> f64 {
    (count as f64 + 1.0) / (draws as f64 + 1.0)
}
