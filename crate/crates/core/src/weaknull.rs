//! Studentized randomization tests of session-wise weak nulls.
//!
//! The series is cut into `J` equal sessions of length `L`; the last
//! `n = L - m` periods of each session are its focal positions. Draws relabel
//! whole sessions with independent Bernoulli(p_j) labels while every focal
//! outcome row stays attached to its own session.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::AssignmentPath;
use crate::error::{Error, Result};
use crate::numerics::StreamRng;
use crate::parallel::map_draws;
use crate::report::{mc_p_value, McOptions, Sidedness, TestReport};
use crate::total::{ht_difference, ht_upper_variance, studentize};

/// Relative eigenvalue cutoff of the pseudo-inverse used by the joint test.
pub const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionFrame {
    pub session_len: usize,
    pub m: usize,
    pub labels: Vec<bool>,
    pub probs: Vec<f64>,
    /// `J x n` focal outcomes.
    pub outcomes: DMatrix<f64>,
    pub means: Vec<f64>,
}

impl SessionFrame {
    pub fn from_parts(session_len: usize, m: usize, labels: Vec<bool>, probs: Vec<f64>, outcomes: DMatrix<f64>) -> Result<Self> {
        let j = labels.len();
        if j == 0 {
            return Err(Error::InvalidInput("a session frame needs at least one session".into()));
        }
        if probs.len() != j || outcomes.nrows() != j {
            return Err(Error::LengthMismatch { expected: j, got: if probs.len() != j { probs.len() } else { outcomes.nrows() } });
        }
        if session_len <= m || outcomes.ncols() != session_len - m {
            return Err(Error::InvalidInput(format!(
                "session length {session_len} must exceed m = {m} and match {} focal columns",
                outcomes.ncols()
            )));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Domain(format!("session {i} has probability {p} outside (0, 1)")));
        }
        let n = outcomes.ncols() as f64;
        let means = outcomes.row_iter().map(|r| r.sum() / n).collect();
        Ok(SessionFrame { session_len, m, labels, probs, outcomes, means })
    }

    pub fn n_sessions(&self) -> usize {
        self.labels.len()
    }

    pub fn n_positions(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn column(&self, position: usize) -> Vec<f64> {
        self.outcomes.column(position).iter().copied().collect()
    }
}

/// Cut `y` into sessions of `session_len` periods and keep the last
/// `session_len - m` periods of each.
pub fn build_session_frame(
    y: &[f64],
    path: &AssignmentPath,
    session_len: usize,
    m: usize,
    probs: &[f64],
) -> Result<SessionFrame> {
    let t = y.len();
    if path.len() != t {
        return Err(Error::LengthMismatch { expected: t, got: path.len() });
    }
    if session_len == 0 || !t.is_multiple_of(session_len) {
        return Err(Error::InvalidInput(format!("T = {t} is not divisible by the session length {session_len}")));
    }
    if session_len <= m {
        return Err(Error::InvalidInput(format!("session length {session_len} must exceed m = {m}")));
    }
    let j = t / session_len;
    let n = session_len - m;
    let mut labels = Vec::with_capacity(j);
    for s in 0..j {
        let start = s * session_len + 1;
        if !path.is_constant_on(start..=start + session_len - 1) {
            return Err(Error::InvalidInput(format!(
                "assignment is not constant within session {} (periods {start}..={})",
                s + 1,
                start + session_len - 1
            )));
        }
        labels.push(path.at(start));
    }
    let outcomes = DMatrix::from_fn(j, n, |s, l| y[s * session_len + m + l]);
    SessionFrame::from_parts(session_len, m, labels, probs.to_vec(), outcomes)
}

/// HT estimate, upper-bound variance and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Studentized {
    pub estimate: f64,
    pub variance: f64,
    pub statistic: f64,
    pub degenerate: bool,
}

impl Studentized {
    fn of(labels: &[bool], values: &[f64], probs: &[f64]) -> Self {
        let estimate = ht_difference(labels, values, probs);
        let variance = ht_upper_variance(labels, values, probs);
        Studentized { estimate, variance, statistic: studentize(estimate, variance), degenerate: variance <= 0.0 }
    }
}

pub fn ht_focal_average(frame: &SessionFrame) -> f64 {
    ht_difference(&frame.labels, &frame.means, &frame.probs)
}

pub fn v_up(frame: &SessionFrame) -> f64 {
    ht_upper_variance(&frame.labels, &frame.means, &frame.probs)
}

pub fn t_stud(frame: &SessionFrame) -> Studentized {
    Studentized::of(&frame.labels, &frame.means, &frame.probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    /// 1-based focal position.
    pub position: usize,
    pub estimate: f64,
    pub variance: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentizedReport {
    #[serde(flatten)]
    pub report: TestReport,
    pub estimate: f64,
    pub variance: f64,
    pub sessions: usize,
    pub focal_positions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<PositionReport>,
}

fn draw_labels(probs: &[f64], rng: &mut StreamRng) -> Vec<bool> {
    probs.iter().map(|&p| rng.bernoulli_unchecked(p)).collect()
}

fn wrap(name: &str, frame: &SessionFrame, obs: Studentized, count: usize, opts: &McOptions) -> StudentizedReport {
    let mut report = TestReport::new(name, obs.statistic, count, opts);
    report.focal_count = frame.n_sessions() * frame.n_positions();
    report.sections_used = frame.n_sessions();
    if obs.degenerate {
        report.degenerate = true;
        report.degenerate_reason = Some("variance bound is zero".into());
    }
    StudentizedReport {
        report,
        estimate: obs.estimate,
        variance: obs.variance,
        sessions: frame.n_sessions(),
        focal_positions: frame.n_positions(),
        positions: Vec::new(),
    }
}

/// Randomization draws of `T*_stud` for the focal-average statistic.
pub fn stud_draws(frame: &SessionFrame, draws: usize, seed: u64) -> Vec<f64> {
    map_draws(draws, seed, |rng| Studentized::of(&draw_labels(&frame.probs, rng), &frame.means, &frame.probs).statistic)
}

/// Studentized CRT of the focal-average weak null.
pub fn crt_weaknull(frame: &SessionFrame, opts: &McOptions) -> StudentizedReport {
    let obs = t_stud(frame);
    let count = stud_draws(frame, opts.draws, opts.seed)
        .into_iter()
        .filter(|&t| opts.sidedness.at_least_as_extreme(t, obs.statistic))
        .count();
    wrap("weaknull", frame, obs, count, opts)
}

/// Position-wise studentized CRTs sharing one set of label draws. `positions`
/// holds 1-based indices; `None` tests every focal position.
pub fn position_tests(frame: &SessionFrame, positions: Option<&[usize]>, opts: &McOptions) -> Result<Vec<PositionReport>> {
    let n = frame.n_positions();
    let chosen: Vec<usize> = match positions {
        Some(p) => p.to_vec(),
        None => (1..=n).collect(),
    };
    if let Some(bad) = chosen.iter().find(|&&l| l == 0 || l > n) {
        return Err(Error::InvalidInput(format!("focal position {bad} is outside 1..={n}")));
    }
    let columns: Vec<Vec<f64>> = chosen.iter().map(|&l| frame.column(l - 1)).collect();
    let observed: Vec<Studentized> = columns.iter().map(|c| Studentized::of(&frame.labels, c, &frame.probs)).collect();
    let hits: Vec<Vec<bool>> = map_draws(opts.draws, opts.seed, |rng| {
        let z = draw_labels(&frame.probs, rng);
        columns
            .iter()
            .zip(&observed)
            .map(|(c, o)| opts.sidedness.at_least_as_extreme(Studentized::of(&z, c, &frame.probs).statistic, o.statistic))
            .collect()
    });
    Ok(chosen
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let count = hits.iter().filter(|h| h[i]).count();
            let o = observed[i];
            PositionReport {
                position: l,
                estimate: o.estimate,
                variance: o.variance,
                statistic: o.statistic,
                p_value: mc_p_value(count, opts.draws),
                degenerate: o.degenerate,
            }
        })
        .collect())
}

/// Position estimates `tau_l` and the upper-bound covariance for labels `z`.
fn position_moments(frame: &SessionFrame, z: &[bool]) -> (DVector<f64>, DMatrix<f64>) {
    let (j, n) = (frame.n_sessions(), frame.n_positions());
    let mut tau = DVector::zeros(n);
    let mut sigma = DMatrix::zeros(n, n);
    for s in 0..j {
        let p = frame.probs[s];
        let row = frame.outcomes.row(s).transpose();
        let (w, c) = if z[s] { (1.0 / p, 1.0 / (p * p)) } else { (-1.0 / (1.0 - p), 1.0 / ((1.0 - p) * (1.0 - p))) };
        tau.axpy(w, &row, 1.0);
        sigma.ger(c, &row, &row, 1.0);
    }
    let jf = j as f64;
    (tau / jf, sigma / (jf * jf))
}

/// `tau' Sigma^+ tau` with eigenvalues below `PINV_RTOL * max` dropped.
/// `None` when `Sigma` vanishes.
pub fn quadratic_form_pinv(tau: &DVector<f64>, sigma: &DMatrix<f64>) -> Option<f64> {
    let eig = SymmetricEigen::new(sigma.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    if top <= 0.0 {
        return None;
    }
    let cutoff = PINV_RTOL * top;
    let mut total = 0.0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let proj = eig.eigenvectors.column(k).dot(tau);
            total += proj * proj / lambda;
        }
    }
    Some(total)
}

/// Joint statistic for labels `z`; 0 when the covariance bound vanishes.
pub fn t_f(frame: &SessionFrame, z: &[bool]) -> (f64, bool) {
    let (tau, sigma) = position_moments(frame, z);
    match quadratic_form_pinv(&tau, &sigma) {
        Some(t) => (t, false),
        None => (0.0, true),
    }
}

pub fn f_draws(frame: &SessionFrame, draws: usize, seed: u64) -> Vec<f64> {
    map_draws(draws, seed, |rng| t_f(frame, &draw_labels(&frame.probs, rng)).0)
}

/// Joint quadratic-form CRT across all focal positions (upper tail).
pub fn joint_f_test(frame: &SessionFrame, opts: &McOptions) -> TestReport {
    let opts = McOptions { sidedness: Sidedness::Upper, ..*opts };
    let (t_obs, degenerate) = t_f(frame, &frame.labels);
    if degenerate {
        return TestReport::degenerate("joint-f", "covariance bound is zero", &opts);
    }
    let count = f_draws(frame, opts.draws, opts.seed).into_iter().filter(|&t| t >= t_obs).count();
    let mut report = TestReport::new("joint-f", t_obs, count, &opts);
    report.focal_count = frame.n_sessions() * frame.n_positions();
    report.sections_used = frame.n_sessions();
    report
}

/// Weighted-regression coefficient on the label and its HC0 variance, in
/// closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionStat {
    pub mu1: f64,
    pub mu0: f64,
    pub estimate: f64,
    pub variance: f64,
    pub statistic: f64,
    pub degenerate: bool,
}

pub fn regression_stat_with(labels: &[bool], means: &[f64], probs: &[f64]) -> Result<RegressionStat> {
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for ((&z, &y), &p) in labels.iter().zip(means).zip(probs) {
        if z {
            s1 += y / p;
            w1 += 1.0 / p;
        } else {
            s0 += y / (1.0 - p);
            w0 += 1.0 / (1.0 - p);
        }
    }
    if w1 == 0.0 || w0 == 0.0 {
        return Err(Error::Domain("regression statistic needs both arms nonempty".into()));
    }
    let (mu1, mu0) = (s1 / w1, s0 / w0);
    let (mut r1, mut r0) = (0.0, 0.0);
    for ((&z, &y), &p) in labels.iter().zip(means).zip(probs) {
        if z {
            r1 += ((y - mu1) / p).powi(2);
        } else {
            r0 += ((y - mu0) / (1.0 - p)).powi(2);
        }
    }
    let variance = r1 / (w1 * w1) + r0 / (w0 * w0);
    let estimate = mu1 - mu0;
    Ok(RegressionStat { mu1, mu0, estimate, variance, statistic: studentize(estimate, variance), degenerate: variance <= 0.0 })
}

pub fn regression_stat(frame: &SessionFrame) -> Result<RegressionStat> {
    regression_stat_with(&frame.labels, &frame.means, &frame.probs)
}

const MAX_REDRAWS: usize = 10_000;

/// CRT with the regression statistic. Draws leaving an arm empty are
/// redrawn; an empty observed arm gives a degenerate report.
pub fn crt_regression(frame: &SessionFrame, opts: &McOptions) -> StudentizedReport {
    const NAME: &str = "weaknull-regression";
    let obs = match regression_stat(frame) {
        Ok(r) => r,
        Err(_) => {
            let report = TestReport::degenerate(NAME, "observed labels leave one arm empty", opts);
            return StudentizedReport {
                report,
                estimate: 0.0,
                variance: 0.0,
                sessions: frame.n_sessions(),
                focal_positions: frame.n_positions(),
                positions: Vec::new(),
            };
        }
    };
    let hits = map_draws(opts.draws, opts.seed, |rng| {
        for _ in 0..MAX_REDRAWS {
            let z = draw_labels(&frame.probs, rng);
            if let Ok(r) = regression_stat_with(&z, &frame.means, &frame.probs) {
                return opts.sidedness.at_least_as_extreme(r.statistic, obs.statistic);
            }
        }
        true
    });
    let count = hits.into_iter().filter(|&h| h).count();
    let s = Studentized { estimate: obs.estimate, variance: obs.variance, statistic: obs.statistic, degenerate: obs.degenerate };
    wrap(NAME, frame, s, count, opts)
}

/// Both potential focal outcome tables of a session layout, `J x n` each.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPotentials {
    pub treated: DMatrix<f64>,
    pub control: DMatrix<f64>,
}

impl SessionPotentials {
    /// Cross-session average effect at each focal position.
    pub fn tau_positions(&self) -> Vec<f64> {
        let j = self.treated.nrows() as f64;
        (0..self.treated.ncols()).map(|l| (self.treated.column(l).sum() - self.control.column(l).sum()) / j).collect()
    }

    /// Average over sessions of the focal-mean effect.
    pub fn tau_focal(&self) -> f64 {
        let (j, n) = (self.treated.nrows(), self.treated.ncols() as f64);
        (0..j).map(|s| self.treated.row(s).sum() / n - self.control.row(s).sum() / n).sum::<f64>() / j as f64
    }

    /// Focal outcomes revealed by session labels `z`.
    pub fn observe(&self, z: &[bool]) -> DMatrix<f64> {
        DMatrix::from_fn(self.treated.nrows(), self.treated.ncols(), |s, l| {
            if z[s] {
                self.treated[(s, l)]
            } else {
                self.control[(s, l)]
            }
        })
    }
}
