//! Normal-approximation power for the studentized total-effect and carryover
//! tests under a distributed-lag model with AR(1) errors, with the design
//! quantities they depend on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_quantile, RngStream, StreamRng};
use crate::parallel::map_draws;

/// Label probability of a constant pooled section of `r` blocks.
pub fn pooled_prob(r: usize, q: f64) -> f64 {
    crate::sections::pooled_label_prob(&vec![q; r])
}

/// Probability that `r` independent Bernoulli(q) blocks agree.
pub fn constancy_prob(r: usize, q: f64) -> f64 {
    q.powi(r as i32) + (1.0 - q).powi(r as i32)
}

/// Variance of the mean of `n` consecutive stationary AR(1) errors.
pub fn ar1_mean_variance(n: usize, rho: f64, sigma_eps2: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if rho.abs() >= 1.0 || rho.is_nan() {
        return Err(Error::Domain(format!("AR(1) coefficient must satisfy |rho| < 1, got {rho}")));
    }
    if sigma_eps2 <= 0.0 || sigma_eps2.is_nan() {
        return Err(Error::Domain(format!("error variance must be positive, got {sigma_eps2}")));
    }
    let nf = n as f64;
    let mut acc = nf;
    let mut rho_h = 1.0;
    for h in 1..n {
        rho_h *= rho;
        acc += 2.0 * (nf - h as f64) * rho_h;
    }
    Ok(sigma_eps2 * acc / (nf * nf))
}

/// How the number of usable pooled sections enters the total-effect power.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum JTot {
    Fixed(f64),
    /// `J * pi_r(q)`.
    #[default]
    Expected,
    /// Average of the conditional power over `Binomial(J, pi_r(q))`.
    BinomialAverage,
}

/// Superpopulation model and design for the power calculators.
///
/// Outcomes are `mu + sum_{l=0}^{m0} beta_l w_{t-l} + eps_t` with AR(1)
/// errors; the design has `n_blocks` blocks of `block_len` periods, each
/// treated with probability `q`, pooled `pool` at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerInputs {
    #[serde(default)]
    pub mu: f64,
    /// Total effect. Defaults to the sum of `beta` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_tot: Option<f64>,
    /// Lag coefficients `beta_0..=beta_m0`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma_u: f64,
    pub q: f64,
    pub block_len: usize,
    #[serde(default = "one")]
    pub pool: usize,
    pub m: usize,
    /// True horizon. Defaults to `beta.len() - 1`, or 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<usize>,
    pub n_blocks: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub j_tot: JTot,
}

fn one() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.05
}

impl PowerInputs {
    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &str, reason: String| Err(Error::Config { field: field.into(), reason });
        if !(self.q > 0.0 && self.q < 1.0) {
            return cfg("q", format!("must lie in (0, 1), got {}", self.q));
        }
        if !(self.rho.abs() < 1.0) {
            return cfg("rho", format!("must satisfy |rho| < 1, got {}", self.rho));
        }
        if !(self.sigma_u > 0.0) {
            return cfg("sigma_u", format!("must be positive, got {}", self.sigma_u));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return cfg("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if self.block_len == 0 {
            return cfg("block_len", "must be at least 1".into());
        }
        if self.pool == 0 || !self.n_blocks.is_multiple_of(self.pool) {
            return cfg("pool", format!("must divide n_blocks = {}, got {}", self.n_blocks, self.pool));
        }
        if self.pool * self.block_len <= self.m {
            return cfg("m", format!("pooled section length {} must exceed m = {}", self.pool * self.block_len, self.m));
        }
        if let (Some(m0), false) = (self.m0, self.beta.is_empty()) {
            if m0 + 1 != self.beta.len() {
                return cfg("m0", format!("beta has {} coefficients but m0 = {m0}", self.beta.len()));
            }
        }
        Ok(())
    }

    pub fn m0(&self) -> usize {
        self.m0.unwrap_or(self.beta.len().saturating_sub(1))
    }

    pub fn tau(&self) -> f64 {
        self.tau_tot.unwrap_or_else(|| self.beta.iter().sum())
    }

    pub fn sigma_eps2(&self) -> f64 {
        self.sigma_u * self.sigma_u / (1.0 - self.rho * self.rho)
    }

    /// Focal periods per pooled section.
    pub fn n_focal(&self) -> usize {
        self.pool * self.block_len - self.m
    }

    /// Number of pooled sections.
    pub fn sections(&self) -> usize {
        self.n_blocks / self.pool
    }

    /// Lag coefficients padded with zeros to `m0 + 1` entries.
    pub fn lags(&self) -> Vec<f64> {
        let mut b = self.beta.clone();
        b.resize(self.m0() + 1, 0.0);
        b
    }

    /// `sigma_u` giving unit stationary error variance.
    pub fn unit_sigma_u(rho: f64) -> f64 {
        (1.0 - rho * rho).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalPower {
    pub pool: usize,
    pub p: f64,
    pub pi_r: f64,
    pub n: usize,
    pub sections: usize,
    pub j_tot: f64,
    pub sigma_bar2: f64,
    pub mu_tot: f64,
    pub sigma_tot: f64,
    pub power: f64,
}

/// `(mu_tot, sigma_tot^2, power)` for a given number of usable sections.
pub fn total_power_at(tau: f64, mu: f64, sigma_bar2: f64, p: f64, j_tot: f64, alpha: f64) -> Result<(f64, f64, f64)> {
    let denom = sigma_bar2 / (p * (1.0 - p)) + (mu + tau).powi(2) / p + mu * mu / (1.0 - p);
    let s_den = sigma_bar2 + p * mu * mu + (1.0 - p) * (mu + tau).powi(2);
    if !(denom > 0.0 && s_den > 0.0) {
        return Err(Error::Domain("power denominators must be positive".into()));
    }
    let mu_tot = tau * j_tot.sqrt() / denom.sqrt();
    let sigma2 = (sigma_bar2 + (mu + (1.0 - p) * tau).powi(2)) / s_den;
    let z = std_normal_quantile(1.0 - alpha)?;
    Ok((mu_tot, sigma2, 1.0 - std_normal_cdf((z - mu_tot) / sigma2.sqrt())))
}

/// Total-effect power under `m >= m0`.
pub fn power_total(inputs: &PowerInputs) -> Result<TotalPower> {
    inputs.validate()?;
    if inputs.m < inputs.m0() {
        return Err(Error::Domain(format!(
            "total-effect power needs m >= m0, got m = {} and m0 = {}",
            inputs.m,
            inputs.m0()
        )));
    }
    let (r, q) = (inputs.pool, inputs.q);
    let p = pooled_prob(r, q);
    let pi_r = constancy_prob(r, q);
    let n = inputs.n_focal();
    let j = inputs.sections();
    let sigma_bar2 = ar1_mean_variance(n, inputs.rho, inputs.sigma_eps2())?;
    let at = |jt: f64| total_power_at(inputs.tau(), inputs.mu, sigma_bar2, p, jt, inputs.alpha);
    let (j_tot, mu_tot, sigma2, power) = match inputs.j_tot {
        JTot::Fixed(jt) => {
            if jt < 1.0 {
                return Err(Error::Domain(format!("J_tot must be at least 1, got {jt}")));
            }
            let (m, s, pw) = at(jt)?;
            (jt, m, s, pw)
        }
        JTot::Expected => {
            let jt = j as f64 * pi_r;
            let (m, s, pw) = at(jt)?;
            (jt, m, s, pw)
        }
        JTot::BinomialAverage => {
            let mut avg = 0.0;
            for (k, w) in binomial_pmf(j, pi_r).into_iter().enumerate() {
                if k > 0 && w > 0.0 {
                    avg += w * at(k as f64)?.2;
                }
            }
            let jt = j as f64 * pi_r;
            let (m, s, _) = at(jt)?;
            (jt, m, s, avg)
        }
    };
    Ok(TotalPower { pool: r, p, pi_r, n, sections: j, j_tot, sigma_bar2, mu_tot, sigma_tot: sigma2.sqrt(), power })
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 || p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[if p >= 1.0 { n } else { 0 }] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_choose = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            (log_choose + k as f64 * lp + (n - k) as f64 * lq).exp()
        })
        .collect()
}

/// `(1/n) sum_{l=m+1}^{m0} min(L, l - m) beta_l` with `n = rL - m`.
pub fn delta_tail(m: usize, m0: usize, block_len: usize, r: usize, beta: &[f64]) -> Result<f64> {
    if !(m < m0 && m0 <= r * block_len) {
        return Err(Error::Domain(format!(
            "carryover power needs m < m0 <= rL, got m = {m}, m0 = {m0}, rL = {}",
            r * block_len
        )));
    }
    if beta.len() < m0 + 1 {
        return Err(Error::Domain(format!("need beta_0..=beta_{m0}, got {} coefficients", beta.len())));
    }
    let n = (r * block_len - m) as f64;
    Ok((m + 1..=m0).map(|l| block_len.min(l - m) as f64 * beta[l]).sum::<f64>() / n)
}

/// Second moments of the even-section focal mean under the two
/// interventions on the label block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarryMoments {
    pub e11: f64,
    pub e00: f64,
    pub e10: f64,
    /// Monte Carlo mean of `Y(1) - Y(0)` and its standard error, when estimated.
    #[serde(default)]
    pub mean_diff: f64,
    #[serde(default)]
    pub mean_diff_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarryPower {
    pub pool: usize,
    pub n: usize,
    pub sections: usize,
    pub pairs: usize,
    pub delta: f64,
    pub v_up: f64,
    pub sigma_delta2: f64,
    pub mu_m: f64,
    pub sigma_m: f64,
    pub power: f64,
}

/// Carryover power from a tail signal, label probability and moments.
pub fn carry_power_at(delta: f64, q: f64, moments: &CarryMoments, pairs: usize, alpha: f64) -> Result<(f64, f64, f64, f64, f64)> {
    if pairs == 0 {
        return Err(Error::Domain("carryover power needs at least one section pair".into()));
    }
    let CarryMoments { e11, e00, e10, .. } = *moments;
    if e10 * e10 > e11 * e00 * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Domain("moments violate Cauchy-Schwarz".into()));
    }
    let v_up = e11 / q + e00 / (1.0 - q);
    if !(v_up > 0.0) {
        return Err(Error::Domain("v_up must be positive".into()));
    }
    let sigma_delta2 = (1.0 / q - 1.0) * e11 + (1.0 / (1.0 - q) - 1.0) * e00 + 2.0 * e10;
    let mu_m = delta * (pairs as f64).sqrt() / v_up.sqrt();
    let sigma_m = (sigma_delta2 / v_up).max(0.0).sqrt();
    let z = std_normal_quantile(1.0 - alpha)?;
    let power = 1.0 - std_normal_cdf((z - mu_m) / sigma_m);
    Ok((v_up, sigma_delta2, mu_m, sigma_m, power))
}

pub fn power_carryover(inputs: &PowerInputs, moments: &CarryMoments) -> Result<CarryPower> {
    inputs.validate()?;
    let delta = delta_tail(inputs.m, inputs.m0(), inputs.block_len, inputs.pool, &inputs.lags())?;
    let pairs = inputs.sections() / 2;
    let (v_up, sigma_delta2, mu_m, sigma_m, power) = carry_power_at(delta, inputs.q, moments, pairs, inputs.alpha)?;
    Ok(CarryPower {
        pool: inputs.pool,
        n: inputs.n_focal(),
        sections: inputs.sections(),
        pairs,
        delta,
        v_up,
        sigma_delta2,
        mu_m,
        sigma_m,
        power,
    })
}

/// Stationary AR(1) errors with Gaussian innovations.
pub fn ar1_noise(len: usize, rho: f64, sigma_u: f64, rng: &mut StreamRng) -> Vec<f64> {
    let sd0 = sigma_u / (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut e = sd0 * rng.gaussian();
    for _ in 0..len {
        out.push(e);
        e = rho * e + sigma_u * rng.gaussian();
    }
    out
}

/// `mu + sum_l beta_l w_{t-l} + eps_t`, lags before period 1 contributing 0.
pub fn distributed_lag_outcomes(w: &[bool], mu: f64, beta: &[f64], eps: &[f64]) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let lagged: f64 = beta.iter().enumerate().filter(|&(l, _)| l <= i && w[i - l]).map(|(_, b)| b).sum();
            mu + lagged + eps[i]
        })
        .collect()
}

/// Monte Carlo moments of the even-section focal mean with the last block of
/// the odd section forced to 1 and to 0. Both arms share the noise path and
/// the draws of every other block.
pub fn estimate_carry_moments(inputs: &PowerInputs, n_sims: usize, seed: u64) -> Result<CarryMoments> {
    inputs.validate()?;
    if n_sims == 0 {
        return Err(Error::Domain("n_sims must be at least 1".into()));
    }
    let (l, r, m) = (inputs.block_len, inputs.pool, inputs.m);
    let beta = inputs.lags();
    let window = 2 * r * l;
    let label_block = r - 1;
    let sims = map_draws(n_sims, seed, |rng| {
        let eps = ar1_noise(window, inputs.rho, inputs.sigma_u, rng);
        let blocks: Vec<bool> = (0..2 * r).map(|_| rng.bernoulli_unchecked(inputs.q)).collect();
        let mean_for = |z: bool| {
            let mut b = blocks.clone();
            b[label_block] = z;
            let w: Vec<bool> = (0..window).map(|t| b[t / l]).collect();
            let y = distributed_lag_outcomes(&w, inputs.mu, &beta, &eps);
            let focal = &y[r * l + m..];
            focal.iter().sum::<f64>() / focal.len() as f64
        };
        (mean_for(true), mean_for(false))
    });
    let ns = n_sims as f64;
    let (mut e11, mut e00, mut e10, mut d1, mut d2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b) in &sims {
        e11 += a * a;
        e00 += b * b;
        e10 += a * b;
        d1 += a - b;
        d2 += (a - b) * (a - b);
    }
    let mean_diff = d1 / ns;
    let var = if n_sims > 1 { (d2 - ns * mean_diff * mean_diff) / (ns - 1.0) } else { 0.0 };
    Ok(CarryMoments { e11: e11 / ns, e00: e00 / ns, e10: e10 / ns, mean_diff, mean_diff_se: (var.max(0.0) / ns).sqrt() })
}

/// Monte Carlo variance of AR(1) means, used to check [`ar1_mean_variance`].
/// Returns the sample variance and its standard error.
pub fn simulate_ar1_mean_variance(n: usize, rho: f64, sigma_u: f64, reps: usize, seed: u64) -> (f64, f64) {
    let means = map_draws(reps, seed, |rng| ar1_noise(n, rho, sigma_u, rng).iter().sum::<f64>() / n as f64);
    let k = reps as f64;
    let mean = means.iter().sum::<f64>() / k;
    let dev: Vec<f64> = means.iter().map(|x| (x - mean).powi(2)).collect();
    let var = dev.iter().sum::<f64>() / (k - 1.0);
    let m4 = dev.iter().map(|d| d * d).sum::<f64>() / k;
    (var, ((m4 - var * var) / k).max(0.0).sqrt())
}

/// Stream for the `i`-th auxiliary simulation of a seed.
pub fn aux_stream(seed: u64, i: u64) -> StreamRng {
    RngStream::new(seed, i).rng()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> PowerInputs {
        PowerInputs {
            mu: 0.0,
            tau_tot: Some(0.5),
            beta: vec![],
            rho: 0.3,
            sigma_u: PowerInputs::unit_sigma_u(0.3),
            q: 0.5,
            block_len: 6,
            pool: 1,
            m: 2,
            m0: None,
            n_blocks: 100,
            alpha: 0.05,
            j_tot: JTot::Fixed(100.0),
        }
    }

    fn enumerate(r: usize, q: f64) -> (f64, f64) {
        let (mut ones, mut zeros) = (0.0, 0.0);
        for mask in 0u32..(1 << r) {
            let k = mask.count_ones() as i32;
            let pr = q.powi(k) * (1.0 - q).powi(r as i32 - k);
            if k == r as i32 {
                ones += pr;
            } else if k == 0 {
                zeros += pr;
            }
        }
        (ones / (ones + zeros), ones + zeros)
    }

    #[test]
    fn pooled_examples() {
        for r in 1..=6 {
            assert!((pooled_prob(r, 0.5) - 0.5).abs() < 1e-15);
            assert!((constancy_prob(r, 0.5) - 2f64.powi(1 - r as i32)).abs() < 1e-15);
        }
        assert!((pooled_prob(2, 0.6) - 0.36 / 0.52).abs() < 1e-15);
        assert!((constancy_prob(2, 0.6) - 0.52).abs() < 1e-15);
        assert_eq!(pooled_prob(1, 0.3), 0.3);
        assert_eq!(constancy_prob(1, 0.3), 1.0);
        for r in 1..=12 {
            for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let (p, pi) = enumerate(r, q);
                assert!((pooled_prob(r, q) - p).abs() < 1e-12);
                assert!((constancy_prob(r, q) - pi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ar1_examples() {
        assert!((ar1_mean_variance(7, 0.0, 2.0).unwrap() - 2.0 / 7.0).abs() < 1e-15);
        assert_eq!(ar1_mean_variance(1, 0.8, 2.5).unwrap(), 2.5);
        assert!((ar1_mean_variance(2, 0.5, 4.0 / 3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(ar1_mean_variance(0, 0.5, 1.0).is_err());
        assert!(ar1_mean_variance(3, 1.0, 1.0).is_err());
        let (v, se) = simulate_ar1_mean_variance(2, 0.5, 1.0, 200_000, 3);
        assert!((v - 1.0).abs() < 3.0 * se, "{v} +- {se}");
    }

    #[test]
    fn total_power_examples() {
        let mut i = base();
        i.tau_tot = Some(0.0);
        let p = power_total(&i).unwrap();
        assert!((p.power - 0.05).abs() < 1e-12);
        assert!((p.sigma_tot - 1.0).abs() < 1e-15);
        i.tau_tot = Some(1e6);
        assert!(power_total(&i).unwrap().power > 1.0 - 1e-9);
        i.tau_tot = Some(0.5);
        let p = power_total(&i).unwrap();
        assert!(p.power > 0.9 && p.power < 1.0, "{p:?}");
        assert_eq!(p.n, 4);
        i.beta = vec![0.2, 0.1, 0.1, 0.1];
        i.tau_tot = None;
        assert!(power_total(&i).is_err());
    }

    #[test]
    fn j_tot_modes() {
        let mut i = base();
        i.pool = 2;
        i.n_blocks = 120;
        i.tau_tot = Some(0.3);
        i.j_tot = JTot::Expected;
        let e = power_total(&i).unwrap();
        assert!((e.j_tot - 30.0).abs() < 1e-12);
        i.j_tot = JTot::BinomialAverage;
        let b = power_total(&i).unwrap();
        assert!((b.power - e.power).abs() < 0.05, "{} vs {}", b.power, e.power);
        assert!(binomial_pmf(60, 0.5).iter().sum::<f64>() - 1.0 < 1e-12);
        i.j_tot = JTot::Fixed(0.0);
        assert!(power_total(&i).is_err());
    }

    #[test]
    fn delta_tail_examples() {
        assert_eq!(delta_tail(2, 5, 3, 2, &[9.0, 9.0, 9.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(delta_tail(2, 5, 3, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(), 1.5);
        assert_eq!(delta_tail(2, 3, 3, 2, &[0.0, 0.0, 0.0, 2.0]).unwrap(), 0.5);
        assert!(delta_tail(2, 2, 3, 2, &[0.0; 3]).is_err());
        assert!(delta_tail(2, 7, 3, 2, &[0.0; 8]).is_err());
    }

    /// Count, for each focal period of the even section, the lags that land in
    /// the last block of the preceding odd section.
    fn brute_delta(m: usize, m0: usize, l: usize, r: usize, beta: &[f64]) -> f64 {
        let (sec, label) = (r * l, (r - 1) * l..r * l);
        let focal = sec + m..2 * sec;
        let n = focal.len() as f64;
        focal.map(|t| (m + 1..=m0).filter(|&lag| t >= lag && label.contains(&(t - lag))).map(|lag| beta[lag]).sum::<f64>()).sum::<f64>() / n
    }

    #[test]
    fn delta_tail_matches_offset_counting() {
        for (m, m0, l, r) in [(2, 5, 3, 2), (0, 4, 2, 3), (1, 6, 3, 2), (3, 8, 4, 2), (0, 1, 1, 1)] {
            let beta: Vec<f64> = (0..=m0).map(|i| 0.3 + i as f64).collect();
            let got = delta_tail(m, m0, l, r, &beta).unwrap();
            assert!((got - brute_delta(m, m0, l, r, &beta)).abs() < 1e-12, "{m} {m0} {l} {r}");
        }
    }

    fn carry_inputs(b: f64) -> PowerInputs {
        PowerInputs {
            mu: 0.0,
            tau_tot: None,
            beta: vec![1.0, 0.5, 0.5, b, b, b],
            rho: 0.3,
            sigma_u: PowerInputs::unit_sigma_u(0.3),
            q: 0.5,
            block_len: 3,
            pool: 2,
            m: 2,
            m0: None,
            n_blocks: 400,
            alpha: 0.05,
            j_tot: JTot::Expected,
        }
    }

    #[test]
    fn carry_moments_track_the_tail_signal() {
        let i = carry_inputs(0.4);
        let mo = estimate_carry_moments(&i, 100_000, 5).unwrap();
        let delta = delta_tail(2, 5, 3, 2, &i.lags()).unwrap();
        assert!((mo.mean_diff - delta).abs() < 3.0 * mo.mean_diff_se + 1e-12, "{mo:?} vs {delta}");
        assert!(mo.e10 * mo.e10 <= mo.e11 * mo.e00);
        let none = estimate_carry_moments(&carry_inputs(0.0), 1000, 5).unwrap();
        assert!((none.e11 - none.e00).abs() < 1e-12 && (none.e11 - none.e10).abs() < 1e-12);
    }

    #[test]
    fn carry_power_limits() {
        let mo = CarryMoments { e11: 2.0, e00: 2.0, e10: 2.0, mean_diff: 0.0, mean_diff_se: 0.0 };
        let (_, _, _, s, pw) = carry_power_at(0.0, 0.5, &mo, 50, 0.05).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && (pw - 0.05).abs() < 1e-12);
        assert!(carry_power_at(0.3, 0.5, &mo, 1_000_000, 0.05).unwrap().4 > 1.0 - 1e-9);
        let bad = CarryMoments { e10: 5.0, ..mo };
        assert!(carry_power_at(0.3, 0.5, &bad, 10, 0.05).is_err());
        let zero = CarryMoments { e11: 0.0, e00: 0.0, e10: 0.0, ..mo };
        assert!(carry_power_at(0.3, 0.5, &zero, 10, 0.05).is_err());
        assert!(power_carryover(&carry_inputs(0.5), &mo).unwrap().pairs == 100);
    }

    #[test]
    fn inputs_json() {
        let json = r#"{"tau_tot":0.5,"rho":0.3,"sigma_u":0.95,"q":0.5,"block_len":6,"m":2,"n_blocks":100}"#;
        let i: PowerInputs = serde_json::from_str(json).unwrap();
        assert_eq!((i.pool, i.alpha, i.j_tot), (1, 0.05, JTot::Expected));
        let fixed: PowerInputs =
            serde_json::from_str(&json.replace("}", r#","j_tot":{"mode":"fixed","value":40}}"#)).unwrap();
        assert_eq!(fixed.j_tot, JTot::Fixed(40.0));
        assert!(serde_json::from_str::<PowerInputs>(&json.replace("rho", "rh0")).is_err());
        let mut bad = i.clone();
        bad.pool = 3;
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "pool"));
    }

    proptest! {
        #[test]
        fn total_power_shape(mu in -2.0f64..2.0, sb in 0.01f64..3.0, p in 0.1f64..0.9, j in 1.0f64..500.0, tau in 0.0f64..3.0) {
            let (_, s2, pw) = total_power_at(tau, mu, sb, p, j, 0.05).unwrap();
            prop_assert!(s2 > 0.0 && s2 <= 1.0 + 1e-12);
            let (_, _, more_j) = total_power_at(tau, mu, sb, p, j + 10.0, 0.05).unwrap();
            prop_assert!(more_j >= pw - 1e-12);
            let (_, s_small, _) = total_power_at(1e-6, mu, sb, p, j, 0.05).unwrap();
            prop_assert!((s_small - 1.0).abs() < 1e-4);
        }

        #[test]
        fn total_power_increases_in_tau(sb in 0.05f64..2.0, j in 5.0f64..400.0, tau in 0.0f64..2.0, step in 0.001f64..0.5) {
            let (_, _, a) = total_power_at(tau, 0.0, sb, 0.5, j, 0.05).unwrap();
            let (_, _, b) = total_power_at(tau + step, 0.0, sb, 0.5, j, 0.05).unwrap();
            prop_assert!(b >= a - 1e-12, "{} -> {}", a, b);
        }

        #[test]
        fn ar1_variance_is_positive(n in 1usize..60, rho in -0.99f64..0.99) {
            prop_assert!(ar1_mean_variance(n, rho, 1.0).unwrap() > 0.0);
        }
    }
}
