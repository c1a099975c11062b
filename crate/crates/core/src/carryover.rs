//! Carryover-horizon diagnostics: the m-carryover CRT and the sequential
//! horizon estimator built on it.
//!
//! Sections of a predetermined family are paired in time order. The second
//! section of each pair supplies focal outcomes; the first supplies a label,
//! the assignment at its final period. Draws freeze the path on the focal
//! sections and redraw every other block from the design.

use serde::{Deserialize, Serialize};

use crate::design::{AssignmentPath, SwitchbackDesign};
use crate::error::{Error, Result};
use crate::numerics::{mix, StreamRng};
use crate::parallel::count_draws;
use crate::report::{McOptions, TestReport, VERSION};
use crate::sections::{greedy_pool, FocalGroup, Section, SectionFamily};
use crate::total::{check_inputs, ht_difference, HtDifference, SectionStatistic};

/// One odd/even section pair with a usable focal window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarryoverPair {
    pub label_section: Section,
    /// Block holding the final period of the label section.
    pub label_block: usize,
    pub label_prob: f64,
    pub label: bool,
    pub focal: FocalGroup,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarryoverLayout {
    pub m: usize,
    pub pairs: Vec<CarryoverPair>,
    /// Sections whose assignments stay fixed across draws.
    pub frozen: Vec<Section>,
}

impl CarryoverLayout {
    /// Pairs whose focal section is shorter than `m + 1` are dropped.
    pub fn build(
        y: &[f64],
        observed: &AssignmentPath,
        design: &SwitchbackDesign,
        family: &SectionFamily,
        m: usize,
    ) -> Result<Self> {
        check_inputs(y, observed, design)?;
        let s = family.sections();
        let mut pairs = Vec::new();
        let mut frozen = Vec::new();
        for i in 0..s.len() / 2 {
            let (odd, even) = (s[2 * i], s[2 * i + 1]);
            frozen.push(even);
            if even.start + m > even.end {
                continue;
            }
            let label_block = odd.last_block;
            let focal = FocalGroup { section: even, first: even.start + m, last: even.end };
            pairs.push(CarryoverPair {
                label_section: odd,
                label_block,
                label_prob: design.block_probs()[label_block],
                label: observed.at(odd.end),
                focal,
                mean: focal.mean(y),
            });
        }
        Ok(CarryoverLayout { m, pairs, frozen })
    }

    pub fn focal_times(&self) -> Vec<usize> {
        self.pairs.iter().flat_map(|p| p.focal.times()).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.label).collect()
    }

    pub fn labels_of(&self, path: &AssignmentPath) -> Vec<bool> {
        self.pairs.iter().map(|p| path.at(p.label_section.end)).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.mean).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.label_prob).collect()
    }
}

/// IPW contrast of focal means across section pairs; `None` without pairs.
pub fn t_m_statistic(layout: &CarryoverLayout) -> Option<f64> {
    if layout.pairs.is_empty() {
        return None;
    }
    Some(ht_difference(&layout.labels(), &layout.means(), &layout.probs()))
}

/// Keep the observed path on `frozen` sections and redraw every other block.
pub fn resample_nonfocal(
    design: &SwitchbackDesign,
    frozen: &[Section],
    observed: &AssignmentPath,
    rng: &mut StreamRng,
) -> AssignmentPath {
    let mut w = observed.clone();
    let mut f = frozen.iter().peekable();
    for k in 0..design.n_blocks() {
        while f.peek().is_some_and(|s| s.last_block < k) {
            f.next();
        }
        if f.peek().is_some_and(|s| s.first_block <= k) {
            continue;
        }
        let z = rng.bernoulli_unchecked(design.block_probs()[k]);
        for t in design.block(k) {
            w.set(t, z);
        }
    }
    w
}

pub fn crt_carryover_test(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    family: &SectionFamily,
    m: usize,
    opts: &McOptions,
) -> Result<TestReport> {
    crt_carryover_test_with(y, observed, design, family, m, opts, &HtDifference)
}

pub fn crt_carryover_test_with(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    family: &SectionFamily,
    m: usize,
    opts: &McOptions,
    statistic: &dyn SectionStatistic,
) -> Result<TestReport> {
    let layout = CarryoverLayout::build(y, observed, design, family, m)?;
    Ok(carryover_on_layout(&layout, design, observed, opts, statistic))
}

pub(crate) fn carryover_on_layout(
    layout: &CarryoverLayout,
    design: &SwitchbackDesign,
    observed: &AssignmentPath,
    opts: &McOptions,
    statistic: &dyn SectionStatistic,
) -> TestReport {
    const NAME: &str = "carryover";
    if layout.pairs.is_empty() {
        return TestReport::degenerate(NAME, "no section pair has a focal window of length m + 1", opts);
    }
    let (means, probs) = (layout.means(), layout.probs());
    let t_obs = statistic.compute(&layout.labels(), &means, &probs);
    let count = count_draws(opts.draws, opts.seed, |rng| {
        let w = resample_nonfocal(design, &layout.frozen, observed, rng);
        let t = statistic.compute(&layout.labels_of(&w), &means, &probs);
        opts.sidedness.at_least_as_extreme(t, t_obs)
    });
    let mut report = TestReport::new(NAME, t_obs, count, opts);
    report.focal_count = layout.pairs.iter().map(|p| p.focal.len()).sum();
    report.sections_used = layout.pairs.len();
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialLevel {
    pub m: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub degenerate: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialReport {
    pub m_hat: usize,
    pub alpha: f64,
    pub m_max: usize,
    pub draws: usize,
    pub seed: u64,
    pub trace: Vec<SequentialLevel>,
    pub version: String,
}

/// Seed used for level `m` of the sequential procedure.
pub fn level_seed(master: u64, m: usize) -> u64 {
    mix(master, 0x5e9_0000 + m as u64)
}

/// Test `m = 0, 1, ...` in turn, each on a family pooled for that `m`, and
/// stop at the first level that is not rejected.
pub fn sequential_m(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    alpha: f64,
    m_max: usize,
    opts: &McOptions,
) -> Result<SequentialReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m_max >= design.horizon() {
        return Err(Error::InvalidInput(format!("m_max = {m_max} must be below T = {}", design.horizon())));
    }
    check_inputs(y, observed, design)?;
    sequential_by(alpha, m_max, opts, |m, level_opts| {
        let family = greedy_pool(design, m)?;
        crt_carryover_test(y, observed, design, &family, m, level_opts)
    })
}

pub(crate) fn sequential_by(
    alpha: f64,
    m_max: usize,
    opts: &McOptions,
    mut level: impl FnMut(usize, &McOptions) -> Result<TestReport>,
) -> Result<SequentialReport> {
    let mut trace = Vec::new();
    let mut m_hat = 0;
    for m in 0..m_max {
        let level_opts = McOptions { seed: level_seed(opts.seed, m), ..*opts };
        let r = level(m, &level_opts)?;
        let rejected = r.p_value <= alpha;
        trace.push(SequentialLevel {
            m,
            statistic: r.statistic_obs,
            p_value: r.p_value,
            rejected,
            degenerate: r.degenerate,
            seed: level_opts.seed,
        });
        if !rejected {
            break;
        }
        m_hat = m + 1;
    }
    Ok(SequentialReport {
        m_hat,
        alpha,
        m_max,
        draws: opts.draws,
        seed: opts.seed,
        trace,
        version: VERSION.to_string(),
    })
}
