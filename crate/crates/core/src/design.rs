//! Regular switchback designs and assignment paths.
//!
//! Periods are 1-indexed (`1..=T`) everywhere in the public API; block
//! indices are 0-indexed (`0..=K`).

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::StreamRng;

/// Switch times, horizon and per-block treatment probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignFile", into = "DesignFile")]
pub struct SwitchbackDesign {
    horizon: usize,
    switch_times: Vec<usize>,
    block_probs: Vec<f64>,
}

/// On-disk layout: `{"T": .., "switch_times": [..], "block_probs": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    #[serde(rename = "T")]
    horizon: usize,
    switch_times: Vec<usize>,
    block_probs: Vec<f64>,
}

impl TryFrom<DesignFile> for SwitchbackDesign {
    type Error = Error;

    fn try_from(f: DesignFile) -> Result<Self> {
        SwitchbackDesign::new(f.horizon, f.switch_times, f.block_probs)
    }
}

impl From<SwitchbackDesign> for DesignFile {
    fn from(d: SwitchbackDesign) -> Self {
        DesignFile { horizon: d.horizon, switch_times: d.switch_times, block_probs: d.block_probs }
    }
}

impl SwitchbackDesign {
    pub fn new(horizon: usize, switch_times: Vec<usize>, block_probs: Vec<f64>) -> Result<Self> {
        let design = Self { horizon, switch_times, block_probs };
        design.validate()?;
        Ok(design)
    }

    /// Check every structural invariant, naming the first offending index.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        if self.horizon == 0 {
            return bad("horizon T must be positive".into());
        }
        if self.switch_times.first() != Some(&1) {
            return bad("switch_times must start at period 1".into());
        }
        for (i, w) in self.switch_times.windows(2).enumerate() {
            if w[1] <= w[0] {
                return bad(format!(
                    "switch_times not strictly increasing at index {}: {} after {}",
                    i + 1,
                    w[1],
                    w[0]
                ));
            }
        }
        if let Some((i, &t)) = self.switch_times.iter().enumerate().find(|(_, &t)| t > self.horizon) {
            return bad(format!("switch time {t} at index {i} exceeds horizon {}", self.horizon));
        }
        if self.block_probs.len() != self.switch_times.len() {
            return bad(format!(
                "{} block probabilities for {} blocks",
                self.block_probs.len(),
                self.switch_times.len()
            ));
        }
        if let Some((i, q)) = self.block_probs.iter().enumerate().find(|(_, q)| !(**q > 0.0 && **q < 1.0)) {
            return bad(format!("block probability {q} at index {i} is not in (0, 1)"));
        }
        Ok(())
    }

    /// Number of periods `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn switch_times(&self) -> &[usize] {
        &self.switch_times
    }

    pub fn block_probs(&self) -> &[f64] {
        &self.block_probs
    }

    /// Number of blocks, `K + 1`.
    pub fn n_blocks(&self) -> usize {
        self.switch_times.len()
    }

    /// Periods of block `k` as an inclusive 1-indexed range.
    pub fn block(&self, k: usize) -> RangeInclusive<usize> {
        let start = self.switch_times[k];
        let end = self.switch_times.get(k + 1).map_or(self.horizon, |next| next - 1);
        start..=end
    }

    pub fn block_len(&self, k: usize) -> usize {
        let r = self.block(k);
        r.end() - r.start() + 1
    }

    pub fn blocks(&self) -> impl Iterator<Item = RangeInclusive<usize>> + '_ {
        (0..self.n_blocks()).map(move |k| self.block(k))
    }

    /// Index of the block containing period `t`.
    pub fn block_of(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.horizon {
            return Err(domain(format!("period {t} outside 1..={}", self.horizon)));
        }
        Ok(self.switch_times.partition_point(|&s| s <= t) - 1)
    }

    /// Draw one path from the design law.
    pub fn sample_assignment(&self, rng: &mut StreamRng) -> AssignmentPath {
        self.sample_with_probs(&self.block_probs, rng)
    }

    /// Draw one blockwise-constant path with caller-supplied block
    /// probabilities; `0` and `1` are allowed and pin the block label.
    pub fn sample_with_probs(&self, probs: &[f64], rng: &mut StreamRng) -> AssignmentPath {
        assert_eq!(probs.len(), self.n_blocks(), "one probability per block");
        let labels: Vec<bool> = probs.iter().map(|&q| rng.bernoulli_unchecked(q)).collect();
        self.broadcast(&labels)
    }

    /// Expand block labels to a path over `1..=T`.
    pub fn broadcast(&self, labels: &[bool]) -> AssignmentPath {
        assert_eq!(labels.len(), self.n_blocks());
        let mut w = Vec::with_capacity(self.horizon);
        for (k, &z) in labels.iter().enumerate() {
            w.extend(std::iter::repeat_n(z, self.block_len(k)));
        }
        AssignmentPath(w)
    }

    /// Block labels of a path that is already known to be blockwise constant.
    pub fn block_labels(&self, path: &AssignmentPath) -> Vec<bool> {
        self.switch_times.iter().map(|&s| path.at(s)).collect()
    }

    /// Check that `path` has length `T` and is constant on every block.
    pub fn check_path(&self, path: &AssignmentPath) -> Result<()> {
        if path.len() != self.horizon {
            return Err(Error::LengthMismatch { expected: self.horizon, got: path.len() });
        }
        for block in self.blocks() {
            let first = path.at(*block.start());
            if let Some(t) = block.clone().find(|&t| path.at(t) != first) {
                return Err(Error::NotBlockwiseConstant { period: t });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The regular design with switch points `{1, 2m+1, 3m+1, ..., (n-2)m+1}`,
/// horizon `T = n m` and every block probability 1/2. Its first and last
/// blocks span `2m` periods and the interior blocks `m`.
pub fn optimal_regular_design(n_blocks: usize, m: usize) -> Result<SwitchbackDesign> {
    if n_blocks < 3 {
        return Err(domain(format!("optimal design needs n >= 3, got {n_blocks}")));
    }
    if m == 0 {
        return Err(domain("optimal design needs m >= 1"));
    }
    let mut switch_times = vec![1];
    switch_times.extend((2..=n_blocks - 2).map(|k| k * m + 1));
    let probs = vec![0.5; switch_times.len()];
    SwitchbackDesign::new(n_blocks * m, switch_times, probs)
}

/// Binary treatment sequence over periods `1..=T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentPath(Vec<bool>);

impl AssignmentPath {
    pub fn new(w: Vec<bool>) -> Self {
        Self(w)
    }

    /// Build from 0/1 integers, rejecting anything else.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidInput(format!("assignment {other} at period {} is not 0/1", i + 1))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Assignment at 1-indexed period `t`.
    #[inline]
    pub fn at(&self, t: usize) -> bool {
        self.0[t - 1]
    }

    pub fn set(&mut self, t: usize, z: bool) {
        self.0[t - 1] = z;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }

    /// True when `w_t` is the same for every `t` in `range`.
    pub fn is_constant_on(&self, range: RangeInclusive<usize>) -> bool {
        let s = &self.0[range.start() - 1..*range.end()];
        s.iter().all(|&z| z == s[0])
    }
}

impl From<Vec<bool>> for AssignmentPath {
    fn from(w: Vec<bool>) -> Self {
        Self(w)
    }
}
