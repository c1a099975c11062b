//! Pairwise imputation-based randomization test of non-anticipation.
//!
//! Alternative schedules share a held-out prefix with the observed one. For
//! each draw the centered signed-score statistic is evaluated twice on the
//! common prefix, once with the signs of each schedule, and the p-value counts
//! how often the alternative signs score at least as high.

use serde::{Deserialize, Serialize};

use crate::design::{AssignmentPath, SwitchbackDesign};
use crate::error::{Error, Result};
use crate::numerics::StreamRng;
use crate::parallel::count_draws;
use crate::report::{McOptions, TestReport};
use crate::total::check_inputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixScheme {
    pub holdout: usize,
}

impl PrefixScheme {
    /// `L = 2m + 1`.
    pub fn for_horizon(m: usize) -> Self {
        PrefixScheme { holdout: 2 * m + 1 }
    }
}

/// Length of the longest common prefix of `w` and `w_prime`.
pub fn common_prefix_len(w: &AssignmentPath, w_prime: &AssignmentPath) -> Result<usize> {
    if w.len() != w_prime.len() {
        return Err(Error::LengthMismatch { expected: w.len(), got: w_prime.len() });
    }
    Ok(w.as_slice().iter().zip(w_prime.as_slice()).take_while(|(a, b)| a == b).count())
}

/// `{t : w_{1:t} = w'_{1:t}}`, always of the form `1..=l`.
pub fn imputable_times(w: &AssignmentPath, w_prime: &AssignmentPath) -> Result<std::ops::RangeInclusive<usize>> {
    Ok(1..=common_prefix_len(w, w_prime)?)
}

/// Keep the observed label on every block starting at or before `L`, so the
/// first `L` periods (and any block straddling `L`) are preserved; redraw the
/// remaining blocks from the design.
pub fn sample_prefix_preserving(
    design: &SwitchbackDesign,
    observed: &AssignmentPath,
    scheme: PrefixScheme,
    rng: &mut StreamRng,
) -> AssignmentPath {
    let mut w = observed.clone();
    for k in 0..design.n_blocks() {
        let block = design.block(k);
        if *block.start() <= scheme.holdout {
            continue;
        }
        let z = rng.bernoulli_unchecked(design.block_probs()[k]);
        for t in block {
            w.set(t, z);
        }
    }
    w
}

/// Centered signed score on `I = imputable(w', w) ∩ [1, T-1]` with signs
/// `2 w_{t+1} - 1`; `+inf` when `I` is empty.
pub fn t_na(y: &[f64], w: &AssignmentPath, w_prime: &AssignmentPath) -> Result<f64> {
    if y.len() != w.len() {
        return Err(Error::LengthMismatch { expected: w.len(), got: y.len() });
    }
    let l = common_prefix_len(w_prime, w)?;
    Ok(t_na_on_prefix(y, w, l.min(w.len().saturating_sub(1))))
}

fn t_na_on_prefix(y: &[f64], w: &AssignmentPath, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let ys = &y[..n];
    let mean = ys.iter().sum::<f64>() / n as f64;
    let signs = &w.as_slice()[1..=n];
    let total: f64 = ys.iter().zip(signs).map(|(&yt, &next)| if next { yt - mean } else { mean - yt }).sum();
    total / n as f64
}

pub fn pirt_test(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    scheme: PrefixScheme,
    opts: &McOptions,
) -> Result<TestReport> {
    check_inputs(y, observed, design)?;
    if scheme.holdout > design.horizon() {
        return Err(Error::InvalidInput(format!(
            "holdout length {} exceeds T = {}",
            scheme.holdout,
            design.horizon()
        )));
    }
    let horizon = design.horizon();
    let count = count_draws(opts.draws, opts.seed, |rng| {
        let alt = sample_prefix_preserving(design, observed, scheme, rng);
        let n = common_prefix_len(&alt, observed).expect("equal lengths").min(horizon - 1);
        let a = t_na_on_prefix(y, &alt, n);
        let b = t_na_on_prefix(y, observed, n);
        opts.sidedness.at_least_as_extreme(a, b)
    });
    let mut report = TestReport::new("anticipation", t_na_on_prefix(y, observed, horizon - 1), count, opts);
    // periods guaranteed to stay imputable across draws
    report.focal_count = design
        .blocks()
        .filter(|b| *b.start() <= scheme.holdout)
        .map(|b| b.count())
        .sum::<usize>()
        .min(horizon);
    Ok(report)
}
