use serde::Serialize;

use crate::design::{AssignmentPath, SwitchbackDesign};
use crate::error::Result;
use crate::numerics::std_normal_quantile;
use crate::parallel::count_draws;
use crate::report::{McOptions, TestReport};
use crate::sections::{constant_sections, focal_units, greedy_pool, section_conditional_prob, SectionFamily};
use crate::total::{check_inputs, ht_difference, SelectedSections, SectionStatistic, StudentizedHt};

/// HT difference over the constant sections of `path`, reading the outcomes
/// as if they were fixed; `None` when no section is constant.
fn naive_ht(y: &[f64], path: &AssignmentPath, design: &SwitchbackDesign, family: &SectionFamily) -> Option<f64> {
    let sections = constant_sections(family, path);
    if sections.is_empty() {
        return None;
    }
    let focal = focal_units(&sections, family.m());
    let labels: Vec<bool> = sections.iter().map(|s| path.at(s.start)).collect();
    let probs: Vec<f64> = sections.iter().map(|s| section_conditional_prob(design, s)).collect();
    let means: Vec<f64> = focal.groups.iter().map(|g| g.mean(y)).collect();
    Some(ht_difference(&labels, &means, &probs))
}

/// Fisher test of a sharp null of no effect: full paths are redrawn from the
/// design and the observed outcomes are reused on every draw's focal set.
pub fn frt_sharp_test(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    m: usize,
    opts: &McOptions,
) -> Result<TestReport> {
    const NAME: &str = "frt-sharp";
    check_inputs(y, observed, design)?;
    let family = greedy_pool(design, m)?;
    let Some(t_obs) = naive_ht(y, observed, design, &family) else {
        return Ok(TestReport::degenerate(NAME, "no focal units are available", opts));
    };
    let count = count_draws(opts.draws, opts.seed, |rng| {
        let w = design.sample_assignment(rng);
        let t = naive_ht(y, &w, design, &family).unwrap_or(0.0);
        opts.sidedness.at_least_as_extreme(t, t_obs)
    });
    let mut report = TestReport::new(NAME, t_obs, count, opts);
    let sel = constant_sections(&family, observed);
    report.focal_count = focal_units(&sel, m).len();
    report.sections_used = sel.len();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// No constant section was observed; never rejects.
    pub degenerate: bool,
}

/// One-sided normal test of the studentized HT estimate on the constant
/// sections, with the conservative variance bound as studentizer.
pub fn ht_asymptotic_test(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    m: usize,
    alpha: f64,
) -> Result<AsymptoticResult> {
    let family = greedy_pool(design, m)?;
    let sel = SelectedSections::observe(y, observed, design, &family)?;
    let critical_value = std_normal_quantile(1.0 - alpha)?;
    if sel.is_empty() {
        return Ok(AsymptoticResult { statistic: 0.0, critical_value, reject: false, degenerate: true });
    }
    let statistic = StudentizedHt.compute(&sel.labels, &sel.means, &sel.probs);
    Ok(AsymptoticResult { statistic, critical_value, reject: statistic >= critical_value, degenerate: false })
}
