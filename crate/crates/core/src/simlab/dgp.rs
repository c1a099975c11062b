use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::AssignmentPath;
use crate::error::{Error, Result};
use crate::numerics::StreamRng;
use crate::weaknull::SessionPotentials;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Gaussian,
    T1,
}

impl Noise {
    pub fn draw(self, rng: &mut StreamRng) -> f64 {
        match self {
            Noise::Gaussian => rng.gaussian(),
            Noise::T1 => rng.t1(),
        }
    }
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Noise::Gaussian => "gaussian",
            Noise::T1 => "t1",
        })
    }
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Noise::Gaussian),
            "t1" => Ok(Noise::T1),
            _ => Err(Error::Parse(format!("unknown noise family `{s}`"))),
        }
    }
}

/// Deterministic time effect `alpha_t`, which also scales the noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeEffect {
    /// `alpha_t = ln t`.
    #[default]
    Log,
    Constant(f64),
}

impl TimeEffect {
    pub fn at(self, t: usize) -> f64 {
        match self {
            TimeEffect::Log => (t as f64).ln(),
            TimeEffect::Constant(c) => c,
        }
    }
}

/// `Y_t = mu + alpha_t + sum_s delta^(t+1-s) w_s + eps_t alpha_t 1{w constant on
/// [max(1, t-m), t]}`.
///
/// Lag index `p = t + 1 - s`: `p = 1` is contemporaneous, `p > 1` carryover
/// and `p <= 0` anticipation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub time_effect: TimeEffect,
    /// `(p, delta^(p))` pairs; unlisted lags are zero.
    pub lag_coeffs: Vec<(i64, f64)>,
    pub noise: Noise,
    pub m_indicator: usize,
}

impl DgpSpec {
    /// Outcomes for a given disturbance sequence.
    pub fn outcomes_given_noise(&self, path: &AssignmentPath, eps: &[f64]) -> Vec<f64> {
        let w = path.as_slice();
        let t_max = w.len() as i64;
        (1..=w.len())
            .map(|t| {
                let alpha = self.time_effect.at(t);
                let treat: f64 = self
                    .lag_coeffs
                    .iter()
                    .filter_map(|&(p, c)| {
                        let s = t as i64 + 1 - p;
                        (s >= 1 && s <= t_max && w[s as usize - 1]).then_some(c)
                    })
                    .sum();
                let from = t.saturating_sub(self.m_indicator).max(1);
                let gate = path.is_constant_on(from..=t);
                let noise = if gate { eps[t - 1] * alpha } else { 0.0 };
                self.mu + alpha + treat + noise
            })
            .collect()
    }

    pub fn simulate_outcomes(&self, path: &AssignmentPath, rng: &mut StreamRng) -> Vec<f64> {
        let eps: Vec<f64> = (0..path.len()).map(|_| self.noise.draw(rng)).collect();
        self.outcomes_given_noise(path, &eps)
    }

    /// Largest carryover lag `p - 1` with a nonzero coefficient, or the
    /// indicator window if longer.
    pub fn carryover_horizon(&self) -> usize {
        self.lag_coeffs
            .iter()
            .filter(|&&(p, c)| c != 0.0 && p >= 1)
            .map(|&(p, _)| p as usize - 1)
            .max()
            .unwrap_or(0)
            .max(self.m_indicator)
    }

    pub fn has_anticipation(&self) -> bool {
        self.lag_coeffs.iter().any(|&(p, c)| c != 0.0 && p <= 0)
    }

    /// Treated and control focal outcomes of `sessions` sessions of length
    /// `session_len`, under all-ones and all-zeros schedules with shared noise.
    /// Requires the outcome at a focal position to depend on its own session
    /// only.
    pub fn session_potentials(&self, sessions: usize, session_len: usize, m: usize, eps: &[f64]) -> Result<SessionPotentials> {
        if self.has_anticipation() || self.carryover_horizon() > m {
            return Err(Error::InvalidInput(format!(
                "outcome model reaches beyond the burn-in m = {m}, so focal outcomes are not session-specific"
            )));
        }
        if session_len <= m {
            return Err(Error::InvalidInput(format!("session length {session_len} must exceed m = {m}")));
        }
        let horizon = sessions * session_len;
        if eps.len() != horizon {
            return Err(Error::LengthMismatch { expected: horizon, got: eps.len() });
        }
        let ones = self.outcomes_given_noise(&AssignmentPath::new(vec![true; horizon]), eps);
        let zeros = self.outcomes_given_noise(&AssignmentPath::new(vec![false; horizon]), eps);
        let n = session_len - m;
        let table = |y: &[f64]| DMatrix::from_fn(sessions, n, |s, l| y[s * session_len + m + l]);
        Ok(SessionPotentials { treated: table(&ones), control: table(&zeros) })
    }
}

/// Effect configurations of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `delta^(1) = delta^(2) = delta^(3) = delta`.
    Total,
    /// `delta^(4) = delta^(5) = delta^(6) = delta`.
    Carryover,
    /// `delta^(-2) = delta^(-1) = delta^(0) = delta`.
    Anticipation,
    /// `delta^(1) = delta` with an indicator window of 0, so the true carryover
    /// horizon is 0.
    Contemporaneous,
}

impl Scenario {
    pub fn dgp(self, delta: f64, noise: Noise, m: usize) -> DgpSpec {
        let (lags, m_indicator): (&[i64], usize) = match self {
            Scenario::Total => (&[1, 2, 3], m),
            Scenario::Carryover => (&[4, 5, 6], m),
            Scenario::Anticipation => (&[-2, -1, 0], m),
            Scenario::Contemporaneous => (&[1], 0),
        };
        DgpSpec {
            mu: 0.0,
            time_effect: TimeEffect::Log,
            lag_coeffs: lags.iter().map(|&p| (p, delta)).collect(),
            noise,
            m_indicator,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Total => "total",
            Scenario::Carryover => "carryover",
            Scenario::Anticipation => "anticipation",
            Scenario::Contemporaneous => "contemporaneous",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn path(bits: &[u8]) -> AssignmentPath {
        AssignmentPath::from_bits(bits).unwrap()
    }

    #[test]
    fn noiseless_baseline_is_the_time_effect() {
        let d = Scenario::Total.dgp(0.0, Noise::Gaussian, 2);
        let y = d.outcomes_given_noise(&path(&[1, 0, 0, 1, 1, 0]), &[0.0; 6]);
        for (t, yt) in (1..=6).zip(&y) {
            assert_eq!(*yt, (t as f64).ln());
        }
    }

    #[test]
    fn lag_sum_on_all_ones() {
        let d = Scenario::Total.dgp(1.5, Noise::Gaussian, 2);
        let y = d.outcomes_given_noise(&path(&[1; 8]), &[0.0; 8]);
        assert_eq!(y[0] - 0.0, 1.5);
        assert_eq!(y[1] - 2f64.ln(), 3.0);
        for t in 3..=8 {
            assert!((y[t - 1] - (t as f64).ln() - 4.5).abs() < 1e-12);
        }
    }

    #[test]
    fn first_period_is_deterministic() {
        let d = Scenario::Total.dgp(1.0, Noise::T1, 2);
        let w = path(&[1, 1, 0, 0]);
        let a = d.simulate_outcomes(&w, &mut RngStream::new(1, 0).rng());
        let b = d.simulate_outcomes(&w, &mut RngStream::new(2, 0).rng());
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn early_indicator_uses_available_prefix() {
        let d = Scenario::Total.dgp(0.0, Noise::Gaussian, 2);
        let eps = [1.0; 4];
        let y = d.outcomes_given_noise(&path(&[1, 1, 0, 0]), &eps);
        // windows: [1,2] constant, [2,3] not, [2,4] not
        assert_eq!(y[1], 2.0 * 2f64.ln());
        assert_eq!(y[2], 3f64.ln());
        assert_eq!(y[3], 4f64.ln());
    }

    #[test]
    fn anticipation_reads_future_assignments() {
        let d = Scenario::Anticipation.dgp(1.0, Noise::Gaussian, 2);
        let y = d.outcomes_given_noise(&path(&[0, 0, 0, 1, 0, 0]), &[0.0; 6]);
        // w_4 enters Y_1 (p = -2), Y_2 (p = -1) and Y_3 (p = 0)
        for t in 1..=3 {
            assert_eq!(y[t - 1], (t as f64).ln() + 1.0);
        }
        assert_eq!(y[3], 4f64.ln());
    }

    #[test]
    fn horizons() {
        assert_eq!(Scenario::Total.dgp(1.0, Noise::Gaussian, 2).carryover_horizon(), 2);
        assert_eq!(Scenario::Carryover.dgp(1.0, Noise::Gaussian, 2).carryover_horizon(), 5);
        assert_eq!(Scenario::Carryover.dgp(0.0, Noise::Gaussian, 2).carryover_horizon(), 2);
        assert_eq!(Scenario::Contemporaneous.dgp(1.0, Noise::Gaussian, 2).carryover_horizon(), 0);
        assert!(Scenario::Anticipation.dgp(1.0, Noise::Gaussian, 2).has_anticipation());
    }

    #[test]
    fn session_tables_average() {
        let d = Scenario::Contemporaneous.dgp(0.7, Noise::Gaussian, 1);
        let mut rng = RngStream::new(9, 0).rng();
        let eps: Vec<f64> = (0..40).map(|_| rng.gaussian()).collect();
        let pot = d.session_potentials(10, 4, 1, &eps).unwrap();
        let taus = pot.tau_positions();
        assert_eq!(taus.len(), 3);
        let avg = taus.iter().sum::<f64>() / 3.0;
        assert!((pot.tau_focal() - avg).abs() < 1e-12);
        assert!((avg - 0.7).abs() < 1e-12);
        assert!(Scenario::Carryover.dgp(1.0, Noise::Gaussian, 2).session_potentials(10, 4, 2, &eps).is_err());
    }

    #[test]
    fn noise_names() {
        assert_eq!("t1".parse::<Noise>().unwrap(), Noise::T1);
        assert!("cauchy".parse::<Noise>().is_err());
        assert_eq!(serde_json::to_string(&Scenario::Contemporaneous).unwrap(), "\"contemporaneous\"");
    }

    proptest! {
        #[test]
        fn toggling_outside_lag_support_is_invisible(bits in prop::collection::vec(0u8..2, 12), s in 1usize..=12, delta in -3.0f64..3.0) {
            // carryover lags 4..=6 with no indicator: Y_t reads w_{t-5..=t-3} only
            let d = Scenario::Carryover.dgp(delta, Noise::Gaussian, 0);
            let w = path(&bits);
            let mut v = w.clone();
            v.set(s, !w.at(s));
            let eps: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.5).collect();
            let (a, b) = (d.outcomes_given_noise(&w, &eps), d.outcomes_given_noise(&v, &eps));
            for t in 1..=12usize {
                let in_support = t >= s + 3 && t <= s + 5;
                if !in_support {
                    prop_assert_eq!(a[t - 1], b[t - 1]);
                }
            }
        }

        #[test]
        fn null_differs_only_through_the_gate(a in prop::collection::vec(0u8..2, 10), b in prop::collection::vec(0u8..2, 10)) {
            let d = Scenario::Total.dgp(0.0, Noise::Gaussian, 2);
            let eps = [0.0; 10];
            prop_assert_eq!(d.outcomes_given_noise(&path(&a), &eps), d.outcomes_given_noise(&path(&b), &eps));
        }
    }
}
