//! Conditional randomization test of the null of no total treatment effect.
//!
//! The observed path selects the constant members of a predetermined section
//! family. Each selected section contributes its label and the mean outcome
//! over its focal periods. Draws relabel the selected sections from their
//! conditional law and recompute the statistic with the focal means held
//! fixed, so no outcome outside the focal set is ever read.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::design::{AssignmentPath, SwitchbackDesign};
use crate::error::{Error, Result};
use crate::numerics::StreamRng;
use crate::parallel::count_draws;
use crate::report::{McOptions, TestReport};
use crate::sections::{
    constant_sections, focal_units, greedy_pool, resample_conditional, section_conditional_prob, FocalSet, Section,
    SectionFamily,
};

/// A statistic of section labels, focal means and label probabilities.
pub trait SectionStatistic: Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, labels: &[bool], means: &[f64], probs: &[f64]) -> f64;
}

/// Inverse-probability-weighted difference in means.
#[derive(Debug, Clone, Copy, Default)]
pub struct HtDifference;

/// [`HtDifference`] divided by the square root of its conservative variance
/// bound; 0 when the bound vanishes.
#[derive(Debug, Clone, Copy, Default)]
pub struct StudentizedHt;

impl SectionStatistic for HtDifference {
    fn name(&self) -> &'static str {
        "ht-difference"
    }

    fn compute(&self, labels: &[bool], means: &[f64], probs: &[f64]) -> f64 {
        ht_difference(labels, means, probs)
    }
}

impl SectionStatistic for StudentizedHt {
    fn name(&self) -> &'static str {
        "studentized-ht"
    }

    fn compute(&self, labels: &[bool], means: &[f64], probs: &[f64]) -> f64 {
        studentize(ht_difference(labels, means, probs), ht_upper_variance(labels, means, probs))
    }
}

/// `(1/J) sum_j [Z_j Y_j / p_j - (1 - Z_j) Y_j / (1 - p_j)]`.
pub fn ht_difference(labels: &[bool], means: &[f64], probs: &[f64]) -> f64 {
    let j = labels.len();
    debug_assert!(j > 0 && means.len() == j && probs.len() == j);
    let sum: f64 = labels
        .iter()
        .zip(means)
        .zip(probs)
        .map(|((&z, &y), &p)| if z { y / p } else { -y / (1.0 - p) })
        .sum();
    sum / j as f64
}

/// `(1/J^2) sum_j Y_j^2 (Z_j / p_j^2 + (1 - Z_j) / (1 - p_j)^2)`.
pub fn ht_upper_variance(labels: &[bool], means: &[f64], probs: &[f64]) -> f64 {
    let j = labels.len() as f64;
    let sum: f64 = labels
        .iter()
        .zip(means)
        .zip(probs)
        .map(|((&z, &y), &p)| if z { y * y / (p * p) } else { y * y / ((1.0 - p) * (1.0 - p)) })
        .sum();
    sum / (j * j)
}

pub(crate) fn studentize(estimate: f64, variance: f64) -> f64 {
    if variance > 0.0 {
        estimate / variance.sqrt()
    } else {
        0.0
    }
}

/// The HT difference read directly from a series, path and focal set.
pub fn ht_diff_statistic(y: &[f64], path: &AssignmentPath, focal: &FocalSet, probs: &[f64]) -> Result<f64> {
    if focal.is_empty() {
        return Err(Error::Domain("no focal units are available".into()));
    }
    if probs.len() != focal.groups.len() {
        return Err(Error::LengthMismatch { expected: focal.groups.len(), got: probs.len() });
    }
    let labels: Vec<bool> = focal.groups.iter().map(|g| path.at(g.section.start)).collect();
    let means: Vec<f64> = focal.groups.iter().map(|g| g.mean(y)).collect();
    Ok(ht_difference(&labels, &means, probs))
}

/// Selected sections of an observed path with everything a draw needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedSections {
    pub sections: Vec<Section>,
    pub probs: Vec<f64>,
    pub labels: Vec<bool>,
    pub means: Vec<f64>,
    pub focal: FocalSet,
}

impl SelectedSections {
    pub fn observe(
        y: &[f64],
        observed: &AssignmentPath,
        design: &SwitchbackDesign,
        family: &SectionFamily,
    ) -> Result<Self> {
        check_inputs(y, observed, design)?;
        let sections = constant_sections(family, observed);
        let focal = focal_units(&sections, family.m());
        if focal.groups.len() != sections.len() {
            return Err(Error::InvalidInput(format!(
                "a selected section is shorter than m + 1 = {} periods",
                family.m() + 1
            )));
        }
        let probs = sections.iter().map(|s| section_conditional_prob(design, s)).collect();
        let labels = sections.iter().map(|s| observed.at(s.start)).collect();
        let means = focal.groups.iter().map(|g| g.mean(y)).collect();
        Ok(SelectedSections { sections, probs, labels, means, focal })
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn labels_of(&self, path: &AssignmentPath) -> Vec<bool> {
        self.sections.iter().map(|s| path.at(s.start)).collect()
    }
}

pub(crate) fn check_inputs(y: &[f64], observed: &AssignmentPath, design: &SwitchbackDesign) -> Result<()> {
    if y.len() != design.horizon() {
        return Err(Error::LengthMismatch { expected: design.horizon(), got: y.len() });
    }
    design.check_path(observed)
}

/// Law used to relabel the selected sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampler {
    /// Independent Bernoulli(p_j) per section.
    #[default]
    Bernoulli,
    /// Uniform permutation of the observed labels among sections sharing p_j.
    StratifiedPermutation,
}

/// Permute the observed labels within strata of equal section probability and
/// copy the observed path elsewhere.
pub fn stratified_permutation_resampler(
    selected: &[Section],
    probs: &[f64],
    observed: &AssignmentPath,
    rng: &mut StreamRng,
) -> AssignmentPath {
    assert_eq!(selected.len(), probs.len());
    let mut strata: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (j, p) in probs.iter().enumerate() {
        strata.entry(p.to_bits()).or_default().push(j);
    }
    let mut w = observed.clone();
    for members in strata.values() {
        let mut labels: Vec<bool> = members.iter().map(|&j| observed.at(selected[j].start)).collect();
        for i in (1..labels.len()).rev() {
            labels.swap(i, rng.below(i + 1));
        }
        for (&j, &z) in members.iter().zip(&labels) {
            for t in selected[j].periods() {
                w.set(t, z);
            }
        }
    }
    w
}

fn resample(kind: Resampler, sel: &SelectedSections, observed: &AssignmentPath, rng: &mut StreamRng) -> AssignmentPath {
    match kind {
        Resampler::Bernoulli => resample_conditional(&sel.sections, &sel.probs, observed, rng),
        Resampler::StratifiedPermutation => stratified_permutation_resampler(&sel.sections, &sel.probs, observed, rng),
    }
}

/// Total-effect CRT with greedy pooling, the HT difference and Bernoulli
/// relabelling.
pub fn crt_total_test(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    m: usize,
    opts: &McOptions,
) -> Result<TestReport> {
    let family = greedy_pool(design, m)?;
    crt_total_test_with(y, observed, design, &family, opts, &HtDifference, Resampler::Bernoulli)
}

pub fn crt_total_test_with(
    y: &[f64],
    observed: &AssignmentPath,
    design: &SwitchbackDesign,
    family: &SectionFamily,
    opts: &McOptions,
    statistic: &dyn SectionStatistic,
    resampler: Resampler,
) -> Result<TestReport> {
    let sel = SelectedSections::observe(y, observed, design, family)?;
    Ok(crt_on_selected(&sel, observed, opts, statistic, resampler))
}

pub(crate) fn crt_on_selected(
    sel: &SelectedSections,
    observed: &AssignmentPath,
    opts: &McOptions,
    statistic: &dyn SectionStatistic,
    resampler: Resampler,
) -> TestReport {
    const NAME: &str = "total";
    if sel.is_empty() {
        return TestReport::degenerate(NAME, "no focal units are available", opts);
    }
    let t_obs = statistic.compute(&sel.labels, &sel.means, &sel.probs);
    let count = count_draws(opts.draws, opts.seed, |rng| {
        let w = resample(resampler, sel, observed, rng);
        let t = statistic.compute(&sel.labels_of(&w), &sel.means, &sel.probs);
        opts.sidedness.at_least_as_extreme(t, t_obs)
    });
    let mut report = TestReport::new(NAME, t_obs, count, opts);
    report.focal_count = sel.focal.len();
    report.sections_used = sel.sections.len();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::optimal_regular_design;
    use crate::numerics::{ks_two_sample, RngStream};
    use crate::report::mc_p_value;
    use proptest::prelude::*;

    #[test]
    fn ht_difference_examples() {
        assert_eq!(ht_difference(&[true, false], &[1.7, 1.7], &[0.5, 0.5]), 0.0);
        assert_eq!(ht_difference(&[true, true], &[1.0, 1.0], &[0.5, 0.5]), 2.0);
        assert_eq!(ht_difference(&[false], &[3.0], &[0.5]), -6.0);
    }

    #[test]
    fn studentized_examples() {
        assert_eq!(ht_upper_variance(&[true], &[2.0], &[0.5]), 16.0);
        assert_eq!(StudentizedHt.compute(&[true], &[2.0], &[0.5]), 1.0);
        assert_eq!(StudentizedHt.compute(&[true, false], &[0.0, 0.0], &[0.5, 0.5]), 0.0);
    }

    /// A null world of the kind used in the study: time trend plus noise
    /// gated on the recent window being constant.
    fn null_outcomes(path: &AssignmentPath, m: usize, rng: &mut StreamRng) -> Vec<f64> {
        (1..=path.len())
            .map(|t| {
                let a = (t as f64).ln();
                let gate = path.is_constant_on(t.saturating_sub(m).max(1)..=t);
                a + if gate { a * rng.gaussian() } else { 0.0 }
            })
            .collect()
    }

    #[test]
    fn ht_diff_statistic_from_series() {
        let d = optimal_regular_design(5, 2).unwrap();
        let path = d.broadcast(&[true, false, false]);
        let fam = greedy_pool(&d, 2).unwrap();
        let sel = constant_sections(&fam, &path);
        let focal = focal_units(&sel, 2);
        let y: Vec<f64> = (1..=10).map(|t| t as f64).collect();
        let probs = vec![0.5; sel.len()];
        let direct = ht_diff_statistic(&y, &path, &focal, &probs).unwrap();
        let s = SelectedSections::observe(&y, &path, &d, &fam).unwrap();
        assert_eq!(direct, ht_difference(&s.labels, &s.means, &s.probs));
        assert!(ht_diff_statistic(&y, &path, &FocalSet::default(), &[]).is_err());
    }

    #[test]
    fn no_selected_section_is_degenerate() {
        let d = SwitchbackDesign::new(8, vec![1, 3, 5, 7], vec![0.5; 4]).unwrap();
        let fam = crate::sections::pool_fixed(&d, 2, 2).unwrap();
        let path = d.broadcast(&[true, false, true, false]);
        let r = crt_total_test_with(&[0.0; 8], &path, &d, &fam, &McOptions::new(99, 1), &HtDifference, Resampler::Bernoulli)
            .unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn constant_outcomes_never_reject_below_the_floor() {
        let d = optimal_regular_design(20, 2).unwrap();
        for seed in 0..20 {
            let path = d.sample_assignment(&mut RngStream::new(seed, 0).rng());
            let r = crt_total_test(&[4.0; 40], &path, &d, 2, &McOptions::new(99, seed)).unwrap();
            assert!(r.p_value >= 0.01 && r.p_value <= 1.0);
        }
    }

    #[test]
    fn draws_never_read_outcomes_outside_the_focal_set() {
        let d = optimal_regular_design(30, 2).unwrap();
        let fam = greedy_pool(&d, 2).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let path = d.sample_assignment(&mut rng);
        let y = null_outcomes(&path, 2, &mut rng);
        let sel = SelectedSections::observe(&y, &path, &d, &fam).unwrap();
        let focal: Vec<usize> = sel.focal.times();
        let poisoned: Vec<f64> =
            y.iter().enumerate().map(|(i, &v)| if focal.contains(&(i + 1)) { v } else { f64::NAN }).collect();
        let opts = McOptions::new(499, 11);
        let a = crt_total_test(&y, &path, &d, 2, &opts).unwrap();
        let b = crt_total_test(&poisoned, &path, &d, 2, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.statistic_obs.is_finite());
    }

    #[test]
    fn one_stratum_permutation_is_uniform_over_orderings() {
        let d = SwitchbackDesign::new(4, vec![1, 3], vec![0.5, 0.5]).unwrap();
        let fam = greedy_pool(&d, 1).unwrap();
        let obs = d.broadcast(&[true, false]);
        let sel = constant_sections(&fam, &obs);
        let n = 20_000;
        let mut rng = RngStream::new(2, 0).rng();
        let mut flipped = 0;
        for _ in 0..n {
            let w = stratified_permutation_resampler(&sel, &[0.5, 0.5], &obs, &mut rng);
            assert_ne!(w.at(1), w.at(3));
            flipped += !w.at(1) as usize;
        }
        let f = flipped as f64 / n as f64;
        assert!((f - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn permutation_keeps_labels_within_strata() {
        let d = SwitchbackDesign::new(6, vec![1, 2, 3, 4, 5, 6], vec![0.5, 0.5, 0.5, 0.3, 0.3, 0.3]).unwrap();
        let fam = greedy_pool(&d, 0).unwrap();
        let obs = d.broadcast(&[true, true, true, false, false, false]);
        let sel = constant_sections(&fam, &obs);
        let probs: Vec<f64> = sel.iter().map(|s| section_conditional_prob(&d, s)).collect();
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..200 {
            assert_eq!(stratified_permutation_resampler(&sel, &probs, &obs, &mut rng), obs);
        }
        let mixed = d.broadcast(&[true, false, false, true, true, false]);
        for _ in 0..200 {
            let w = stratified_permutation_resampler(&sel, &probs, &mixed, &mut rng);
            assert_eq!(w.as_slice()[..3].iter().filter(|&&z| z).count(), 1);
            assert_eq!(w.as_slice()[3..].iter().filter(|&&z| z).count(), 2);
        }
    }

    #[test]
    fn finite_sample_validity_under_a_non_sharp_null() {
        let d = optimal_regular_design(30, 2).unwrap();
        let reps = 2000u64;
        let opts_for = |r| McOptions::new(199, 1_000 + r);
        let pvals: Vec<f64> = (0..reps)
            .map(|r| {
                let mut rng = RngStream::new(77, r).rng();
                let path = d.sample_assignment(&mut rng);
                let y = null_outcomes(&path, 2, &mut rng);
                crt_total_test(&y, &path, &d, 2, &opts_for(r)).unwrap().p_value
            })
            .collect();
        for alpha in [0.01, 0.05, 0.1] {
            let rate = pvals.iter().filter(|&&p| p <= alpha).count() as f64 / reps as f64;
            let se = (alpha * (1.0 - alpha) / reps as f64).sqrt();
            assert!(rate <= alpha + 3.0 * se, "alpha {alpha}: rate {rate}");
        }
    }

    #[test]
    fn permutation_and_bernoulli_p_values_agree_in_distribution() {
        // with only a handful of selected sections the permutation law is
        // coarse and its ties make it visibly conservative
        let d = optimal_regular_design(120, 2).unwrap();
        let fam = greedy_pool(&d, 2).unwrap();
        let mut base = RngStream::new(13, 0).rng();
        let fixed = d.sample_assignment(&mut base);
        let y = null_outcomes(&fixed, 2, &mut base);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for r in 0..10_000u64 {
            let path = d.sample_assignment(&mut RngStream::new(14, r).rng());
            let opts = McOptions::new(99, r);
            for (kind, out) in [(Resampler::Bernoulli, &mut a), (Resampler::StratifiedPermutation, &mut b)] {
                let rep = crt_total_test_with(&y, &path, &d, &fam, &opts, &HtDifference, kind).unwrap();
                out.push(rep.p_value);
            }
        }
        let ks = ks_two_sample(&a, &b);
        assert!(ks < 0.03, "KS distance {ks}");
    }

    #[test]
    fn effect_is_detected() {
        let d = optimal_regular_design(60, 2).unwrap();
        let mut rejections = 0;
        for r in 0..50u64 {
            let mut rng = RngStream::new(90, r).rng();
            let path = d.sample_assignment(&mut rng);
            let y: Vec<f64> = (1..=120).map(|t| 3.0 * path.at(t) as u8 as f64 + rng.gaussian()).collect();
            rejections += crt_total_test(&y, &path, &d, 2, &McOptions::new(199, r)).unwrap().rejects(0.05) as usize;
        }
        assert!(rejections >= 45, "{rejections}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn p_value_lies_on_the_mc_grid(seed in any::<u64>(), draws in 1usize..200, two in any::<bool>()) {
            let d = optimal_regular_design(10, 2).unwrap();
            let mut rng = RngStream::new(seed, 0).rng();
            let path = d.sample_assignment(&mut rng);
            let y: Vec<f64> = (0..20).map(|_| rng.gaussian()).collect();
            let mut opts = McOptions::new(draws, seed);
            if two { opts = opts.two_sided(); }
            let r = crt_total_test(&y, &path, &d, 2, &opts).unwrap();
            prop_assert!(r.p_value >= mc_p_value(0, draws) && r.p_value <= 1.0);
            let count = r.p_value * (draws as f64 + 1.0) - 1.0;
            prop_assert!((count - count.round()).abs() < 1e-9);
        }
    }
}
