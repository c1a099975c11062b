//! Empirical rejection rates of the studentized tests under the
//! distributed-lag AR(1) model, for comparison with the power formulas.

use crate::carryover::crt_carryover_test_with;
use crate::design::SwitchbackDesign;
use crate::error::Result;
use crate::numerics::{mix, RngStream};
use crate::power::{ar1_noise, distributed_lag_outcomes, PowerInputs};
use crate::report::McOptions;
use crate::sections::pool_fixed;
use crate::total::{crt_total_test_with, Resampler, StudentizedHt};

/// Equal blocks of `block_len` periods with constant probability `q`.
pub fn equal_block_design(inputs: &PowerInputs) -> Result<SwitchbackDesign> {
    let (l, k) = (inputs.block_len, inputs.n_blocks);
    SwitchbackDesign::new(l * k, (0..k).map(|i| i * l + 1).collect(), vec![inputs.q; k])
}

fn lag_coefficients(inputs: &PowerInputs) -> Vec<f64> {
    if inputs.beta.is_empty() {
        vec![inputs.tau()]
    } else {
        inputs.lags()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalPower {
    pub rate: f64,
    pub se: f64,
    pub reps: usize,
}

impl EmpiricalPower {
    fn from_hits(hits: usize, reps: usize) -> Self {
        let rate = hits as f64 / reps as f64;
        EmpiricalPower { rate, se: (rate * (1.0 - rate) / reps as f64).sqrt(), reps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerTarget {
    Total,
    Carryover,
}

/// Rejection rate of the studentized total-effect or carryover CRT with
/// fixed pooling of `inputs.pool` blocks.
pub fn simulate_power(inputs: &PowerInputs, target: PowerTarget, reps: usize, draws: usize, seed: u64) -> Result<EmpiricalPower> {
    inputs.validate()?;
    let design = equal_block_design(inputs)?;
    let family = pool_fixed(&design, inputs.pool, inputs.m)?;
    let beta = lag_coefficients(inputs);
    let mut hits = 0;
    for r in 0..reps {
        let mut rng = RngStream::new(seed, r as u64).rng();
        let path = design.sample_assignment(&mut rng);
        let eps = ar1_noise(design.horizon(), inputs.rho, inputs.sigma_u, &mut rng);
        let y = distributed_lag_outcomes(path.as_slice(), inputs.mu, &beta, &eps);
        let opts = McOptions::new(draws, mix(seed, r as u64));
        let report = match target {
            PowerTarget::Total => {
                crt_total_test_with(&y, &path, &design, &family, &opts, &StudentizedHt, Resampler::Bernoulli)?
            }
            PowerTarget::Carryover => crt_carryover_test_with(&y, &path, &design, &family, inputs.m, &opts, &StudentizedHt)?,
        };
        hits += report.rejects(inputs.alpha) as usize;
    }
    Ok(EmpiricalPower::from_hits(hits, reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::{estimate_carry_moments, power_carryover, power_total, JTot};

    fn total_inputs(tau: f64) -> PowerInputs {
        PowerInputs {
            mu: 0.0,
            tau_tot: Some(tau),
            beta: vec![],
            rho: 0.3,
            sigma_u: PowerInputs::unit_sigma_u(0.3),
            q: 0.5,
            block_len: 6,
            pool: 1,
            m: 2,
            m0: None,
            n_blocks: 60,
            alpha: 0.05,
            j_tot: JTot::Fixed(60.0),
        }
    }

    #[test]
    fn total_formula_tracks_simulation() {
        let i = total_inputs(0.4);
        let formula = power_total(&i).unwrap().power;
        let sim = simulate_power(&i, PowerTarget::Total, 300, 199, 4).unwrap();
        assert!((formula - sim.rate).abs() < 0.1, "formula {formula} vs {sim:?}");
    }

    #[test]
    fn carryover_formula_tracks_simulation() {
        let i = PowerInputs {
            beta: vec![1.0, 0.5, 0.5, 0.3, 0.3, 0.3],
            tau_tot: None,
            block_len: 3,
            pool: 2,
            n_blocks: 200,
            j_tot: JTot::Expected,
            ..total_inputs(0.0)
        };
        let mo = estimate_carry_moments(&i, 20_000, 8).unwrap();
        let formula = power_carryover(&i, &mo).unwrap().power;
        let sim = simulate_power(&i, PowerTarget::Carryover, 300, 199, 5).unwrap();
        assert!((formula - sim.rate).abs() < 0.12, "formula {formula} vs {sim:?}");
    }

    #[test]
    fn equal_blocks() {
        let d = equal_block_design(&total_inputs(0.0)).unwrap();
        assert_eq!((d.horizon(), d.n_blocks(), d.block_len(59)), (360, 60, 6));
    }
}
