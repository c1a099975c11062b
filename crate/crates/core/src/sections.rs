//! Predetermined pooling of design blocks into sections, selection of the
//! sections that are constant under a realized path, their focal periods, and
//! the conditional label law used for resampling.
//!
//! A family is a function of `(design, m)` only. Selecting the constant
//! members of a fixed family is what keeps the conditioning event invariant
//! under resampling: relabelling a selected section as a whole never changes
//! which members of the family are constant.

use serde::Serialize;

use crate::design::{AssignmentPath, SwitchbackDesign};
use crate::error::{Error, Result};
use crate::numerics::StreamRng;

/// A union of consecutive design blocks, `[start, end]` in periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Section {
    pub start: usize,
    pub end: usize,
    pub first_block: usize,
    pub last_block: usize,
}

impl Section {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn periods(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn n_blocks(&self) -> usize {
        self.last_block - self.first_block + 1
    }
}

/// Ordered, disjoint sections covering `[1, T]`, built for horizon `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SectionFamily {
    sections: Vec<Section>,
    m: usize,
}

impl SectionFamily {
    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Indices of members constant under `path`.
    pub fn constant_indices(&self, path: &AssignmentPath) -> Vec<usize> {
        self.sections
            .iter()
            .enumerate()
            .filter(|(_, s)| path.is_constant_on(s.periods()))
            .map(|(j, _)| j)
            .collect()
    }

    fn section_from_blocks(design: &SwitchbackDesign, a: usize, b: usize) -> Section {
        Section { start: *design.block(a).start(), end: *design.block(b).end(), first_block: a, last_block: b }
    }
}

/// Pool consecutive blocks left to right until each pooled section spans at
/// least `m + 1` periods. Trailing blocks that cannot reach that length are
/// merged into the last closed section.
pub fn greedy_pool(design: &SwitchbackDesign, m: usize) -> Result<SectionFamily> {
    let horizon = design.horizon();
    if horizon < m + 1 {
        return Err(Error::NoAdmissibleSection { horizon, needed: m + 1 });
    }
    let mut sections: Vec<Section> = Vec::new();
    let mut open = 0usize;
    let mut pooled = 0usize;
    for k in 0..design.n_blocks() {
        pooled += design.block_len(k);
        if pooled > m {
            sections.push(SectionFamily::section_from_blocks(design, open, k));
            open = k + 1;
            pooled = 0;
        }
    }
    if open < design.n_blocks() {
        let last = sections.last_mut().expect("T >= m + 1 closes at least one section");
        last.end = horizon;
        last.last_block = design.n_blocks() - 1;
    }
    Ok(SectionFamily { sections, m })
}

/// Pool exactly `r` consecutive blocks per section. The number of blocks must
/// be a multiple of `r` and every section must span at least `m + 1` periods.
pub fn pool_fixed(design: &SwitchbackDesign, r: usize, m: usize) -> Result<SectionFamily> {
    if r == 0 {
        return Err(Error::InvalidInput("pooling size r must be at least 1".into()));
    }
    let k = design.n_blocks();
    if !k.is_multiple_of(r) {
        return Err(Error::InvalidInput(format!("pooling size {r} does not divide the {k} design blocks")));
    }
    let sections: Vec<Section> =
        (0..k / r).map(|j| SectionFamily::section_from_blocks(design, j * r, j * r + r - 1)).collect();
    if let Some((j, s)) = sections.iter().enumerate().find(|(_, s)| s.len() < m + 1) {
        return Err(Error::InvalidInput(format!(
            "pooled section {j} spans {} periods, fewer than m + 1 = {}",
            s.len(),
            m + 1
        )));
    }
    Ok(SectionFamily { sections, m })
}

/// The members of `family` on which `path` is constant, in time order.
pub fn constant_sections(family: &SectionFamily, path: &AssignmentPath) -> Vec<Section> {
    family.constant_indices(path).into_iter().map(|j| family.sections[j]).collect()
}

/// Focal periods `s + m ..= e` of one selected section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FocalGroup {
    pub section: Section,
    pub first: usize,
    pub last: usize,
}

impl FocalGroup {
    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    /// Mean of `y` (indexed by period - 1) over the focal periods.
    pub fn mean(&self, y: &[f64]) -> f64 {
        let slice = &y[self.first - 1..self.last];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Carryover-free periods, grouped by the selected section they belong to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct FocalSet {
    pub groups: Vec<FocalGroup>,
}

impl FocalSet {
    pub fn times(&self) -> Vec<usize> {
        self.groups.iter().flat_map(|g| g.times()).collect()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(FocalGroup::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Union over selected sections of `{t : s + m <= t <= e}`. Sections shorter
/// than `m + 1` contribute nothing.
pub fn focal_units(selected: &[Section], m: usize) -> FocalSet {
    let groups = selected
        .iter()
        .filter(|s| s.start + m <= s.end)
        .map(|&section| FocalGroup { section, first: section.start + m, last: section.end })
        .collect();
    FocalSet { groups }
}

/// Probability that a constant section carries label 1:
/// `prod q_k / (prod q_k + prod (1 - q_k))` over its blocks.
pub fn section_conditional_prob(design: &SwitchbackDesign, section: &Section) -> f64 {
    let q = &design.block_probs()[section.first_block..=section.last_block];
    pooled_label_prob(q)
}

pub(crate) fn pooled_label_prob(q: &[f64]) -> f64 {
    // log-odds form avoids underflow of the two products for long sections
    let log_ratio: f64 = q.iter().map(|&qk| (1.0 - qk).ln() - qk.ln()).sum();
    if q.len() <= 16 {
        let treated: f64 = q.iter().product();
        let control: f64 = q.iter().map(|&qk| 1.0 - qk).product();
        if treated > 0.0 && control > 0.0 {
            return treated / (treated + control);
        }
    }
    1.0 / (1.0 + log_ratio.exp())
}

/// Draw an independent Bernoulli(`probs[j]`) label for each selected section,
/// broadcast it over the section and copy `observed` everywhere else.
pub fn resample_conditional(
    selected: &[Section],
    probs: &[f64],
    observed: &AssignmentPath,
    rng: &mut StreamRng,
) -> AssignmentPath {
    assert_eq!(selected.len(), probs.len());
    let mut w = observed.clone();
    for (s, &p) in selected.iter().zip(probs) {
        let z = rng.bernoulli_unchecked(p);
        for t in s.periods() {
            w.set(t, z);
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::optimal_regular_design;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn design_from_lengths(lens: &[usize], q: &[f64]) -> SwitchbackDesign {
        let mut starts = vec![1];
        for l in &lens[..lens.len() - 1] {
            starts.push(starts.last().unwrap() + l);
        }
        SwitchbackDesign::new(lens.iter().sum(), starts, q.to_vec()).unwrap()
    }

    fn spans(f: &SectionFamily) -> Vec<(usize, usize)> {
        f.sections().iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn greedy_pool_examples() {
        let d = design_from_lengths(&[2, 2, 2, 2], &[0.5; 4]);
        assert_eq!(spans(&greedy_pool(&d, 2).unwrap()), vec![(1, 4), (5, 8)]);

        let d = design_from_lengths(&[2, 2, 1], &[0.5; 3]);
        assert_eq!(spans(&greedy_pool(&d, 2).unwrap()), vec![(1, 5)]);

        let d = design_from_lengths(&[3, 1, 2, 5], &[0.5; 4]);
        let f = greedy_pool(&d, 0).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.sections().iter().all(|s| s.n_blocks() == 1));

        assert!(matches!(greedy_pool(&d, 11), Err(Error::NoAdmissibleSection { .. })));
    }

    #[test]
    fn greedy_pool_on_optimal_design() {
        let d = optimal_regular_design(60, 2).unwrap();
        let f = greedy_pool(&d, 2).unwrap();
        assert_eq!(f.sections()[0], Section { start: 1, end: 4, first_block: 0, last_block: 0 });
        assert_eq!(f.sections()[1].n_blocks(), 2);
        assert_eq!(f.sections().last().unwrap().n_blocks(), 1);
        assert_eq!(f.len(), 30);
    }

    #[test]
    fn fixed_pool() {
        let d = design_from_lengths(&[3; 6], &[0.5; 6]);
        let f = pool_fixed(&d, 2, 2).unwrap();
        assert_eq!(spans(&f), vec![(1, 6), (7, 12), (13, 18)]);
        assert!(pool_fixed(&d, 4, 2).is_err());
        assert!(pool_fixed(&d, 1, 3).is_err());
        assert!(pool_fixed(&d, 0, 0).is_err());
    }

    #[test]
    fn constant_section_selection() {
        let d = design_from_lengths(&[2; 4], &[0.5; 4]);
        let f = greedy_pool(&d, 2).unwrap();
        let ones = d.broadcast(&[true; 4]);
        assert_eq!(constant_sections(&f, &ones).len(), 2);
        let alternating = d.broadcast(&[true, false, true, false]);
        assert!(constant_sections(&f, &alternating).is_empty());
        let single = greedy_pool(&d, 0).unwrap();
        assert_eq!(constant_sections(&single, &alternating).len(), 4);
    }

    #[test]
    fn focal_examples() {
        let s = Section { start: 1, end: 6, first_block: 0, last_block: 0 };
        assert_eq!(focal_units(&[s], 2).times(), vec![3, 4, 5, 6]);
        assert_eq!(focal_units(&[s], 0).times(), (1..=6).collect::<Vec<_>>());
        assert!(focal_units(&[], 2).is_empty());
        assert_eq!(focal_units(&[s], 2).groups[0].mean(&[0., 0., 1., 2., 3., 4.]), 2.5);
    }

    #[test]
    fn conditional_prob_examples() {
        let d = design_from_lengths(&[1, 1, 1], &[0.6, 0.6, 0.3]);
        let both = Section { start: 1, end: 2, first_block: 0, last_block: 1 };
        // brute force over the four labelings of two blocks
        let (mut num, mut den) = (0.0, 0.0);
        for a in [false, true] {
            for b in [false, true] {
                let pr = (if a { 0.6 } else { 0.4 }) * (if b { 0.6 } else { 0.4 });
                if a == b {
                    den += pr;
                    if a {
                        num += pr;
                    }
                }
            }
        }
        assert!((section_conditional_prob(&d, &both) - num / den).abs() < 1e-15);
        assert!((num / den - 0.692_307_692_307_692_3).abs() < 1e-12);
        let last = Section { start: 3, end: 3, first_block: 2, last_block: 2 };
        assert!((section_conditional_prob(&d, &last) - 0.3).abs() < 1e-15);
        let half = design_from_lengths(&[1; 5], &[0.5; 5]);
        let all = Section { start: 1, end: 5, first_block: 0, last_block: 4 };
        assert_eq!(section_conditional_prob(&half, &all), 0.5);
    }

    #[test]
    fn long_sections_do_not_underflow() {
        let q = vec![0.1; 2000];
        let p = pooled_label_prob(&q);
        assert!(p >= 0.0 && p < 1e-300);
        assert_eq!(pooled_label_prob(&vec![0.5; 2000]), 0.5);
    }

    #[test]
    fn resample_edge_cases() {
        let d = design_from_lengths(&[2; 4], &[0.5; 4]);
        let obs = d.broadcast(&[true, true, false, true]);
        let mut rng = RngStream::new(9, 0).rng();
        assert_eq!(resample_conditional(&[], &[], &obs, &mut rng), obs);
        let f = greedy_pool(&d, 2).unwrap();
        let sel = constant_sections(&f, &obs);
        assert_eq!(sel.len(), 1);
        let w = resample_conditional(&sel, &[0.0], &obs, &mut rng);
        assert!(!w.at(1) && !w.at(4));
        assert_eq!(&w.as_slice()[4..], &obs.as_slice()[4..]);
    }

    #[test]
    fn resampled_label_frequencies() {
        let d = design_from_lengths(&[1, 1, 1, 1, 1], &[0.6, 0.6, 0.2, 0.2, 0.2]);
        let s1 = Section { start: 1, end: 2, first_block: 0, last_block: 1 };
        let s2 = Section { start: 3, end: 5, first_block: 2, last_block: 4 };
        let probs = [section_conditional_prob(&d, &s1), section_conditional_prob(&d, &s2)];
        let obs = d.broadcast(&[true, true, false, false, false]);
        let n = 100_000;
        let mut rng = RngStream::new(10, 0).rng();
        let mut c = [0usize; 2];
        for _ in 0..n {
            let w = resample_conditional(&[s1, s2], &probs, &obs, &mut rng);
            c[0] += w.at(1) as usize;
            c[1] += w.at(3) as usize;
        }
        for j in 0..2 {
            let f = c[j] as f64 / n as f64;
            let p = probs[j];
            assert!((f - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "section {j}: {f} vs {p}");
        }
    }

    /// Enumerate every block labelling of up to three sections of up to three
    /// blocks each, condition on all sections being constant and compare the
    /// joint label law with the product of Bernoulli(p_j).
    #[test]
    fn conditional_law_factorizes_by_enumeration() {
        let qs = [0.1, 0.35, 0.5, 0.72, 0.9, 0.6, 0.25, 0.8, 0.45];
        for sizes in [vec![1], vec![3], vec![2, 3], vec![1, 2, 3], vec![3, 3, 3], vec![2, 1, 2]] {
            let k: usize = sizes.iter().sum();
            let q = &qs[..k];
            let mut bounds = Vec::new();
            let mut a = 0;
            for &s in &sizes {
                bounds.push((a, a + s - 1));
                a += s;
            }
            let mut joint = vec![0.0; 1 << sizes.len()];
            let mut total = 0.0;
            for mask in 0u32..(1 << k) {
                let bit = |i: usize| mask >> i & 1 == 1;
                if !bounds.iter().all(|&(a, b)| (a..=b).all(|i| bit(i) == bit(a))) {
                    continue;
                }
                let pr: f64 = (0..k).map(|i| if bit(i) { q[i] } else { 1.0 - q[i] }).product();
                let key = bounds.iter().enumerate().fold(0, |acc, (j, &(a, _))| acc | (bit(a) as usize) << j);
                joint[key] += pr;
                total += pr;
            }
            let p: Vec<f64> = bounds.iter().map(|&(a, b)| pooled_label_prob(&q[a..=b])).collect();
            for (key, &mass) in joint.iter().enumerate() {
                let product: f64 =
                    p.iter().enumerate().map(|(j, &pj)| if key >> j & 1 == 1 { pj } else { 1.0 - pj }).product();
                assert!((mass / total - product).abs() < 1e-12, "sizes {sizes:?} key {key}");
            }
        }
    }

    fn arb_design() -> impl Strategy<Value = SwitchbackDesign> {
        prop::collection::vec((1usize..5, 0.05f64..0.95), 1..14).prop_map(|blocks| {
            let lens: Vec<usize> = blocks.iter().map(|b| b.0).collect();
            let q: Vec<f64> = blocks.iter().map(|b| b.1).collect();
            design_from_lengths(&lens, &q)
        })
    }

    proptest! {
        #[test]
        fn greedy_family_is_a_disjoint_admissible_cover(d in arb_design(), m in 0usize..6) {
            prop_assume!(d.horizon() > m);
            let f = greedy_pool(&d, m).unwrap();
            let s = f.sections();
            prop_assert_eq!(s[0].start, 1);
            prop_assert_eq!(s.last().unwrap().end, d.horizon());
            for w in s.windows(2) {
                prop_assert_eq!(w[0].end + 1, w[1].start);
                prop_assert_eq!(w[0].last_block + 1, w[1].first_block);
            }
            for sec in s {
                prop_assert!(sec.end - sec.start >= m);
                prop_assert_eq!(sec.start, *d.block(sec.first_block).start());
                prop_assert_eq!(sec.end, *d.block(sec.last_block).end());
            }
            prop_assert_eq!(greedy_pool(&d, m).unwrap(), f);
        }

        #[test]
        fn resampling_preserves_the_conditioning_event(d in arb_design(), m in 0usize..4, seed in any::<u64>()) {
            prop_assume!(d.horizon() > m);
            let f = greedy_pool(&d, m).unwrap();
            let obs = d.sample_assignment(&mut RngStream::new(seed, 0).rng());
            let sel = constant_sections(&f, &obs);
            let probs: Vec<f64> = sel.iter().map(|s| section_conditional_prob(&d, s)).collect();
            let focal = focal_units(&sel, m);
            for b in 1..40 {
                let w = resample_conditional(&sel, &probs, &obs, &mut RngStream::new(seed, b).rng());
                d.check_path(&w).unwrap();
                let again = constant_sections(&f, &w);
                for s in &sel {
                    prop_assert!(again.contains(s));
                }
                prop_assert_eq!(focal_units(&sel, m), focal.clone());
                // outside the selected sections the path is untouched
                for t in 1..=d.horizon() {
                    if !sel.iter().any(|s| s.periods().contains(&t)) {
                        prop_assert_eq!(w.at(t), obs.at(t));
                    }
                }
            }
        }
    }
}
