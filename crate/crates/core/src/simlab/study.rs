use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::anticipation::{pirt_test, PrefixScheme};
use crate::carryover::{crt_carryover_test, sequential_m};
use crate::design::{optimal_regular_design, SwitchbackDesign};
use crate::error::{Error, Result};
use crate::numerics::mix;
use crate::parallel::map_draws;
use crate::report::McOptions;
use crate::sections::greedy_pool;
use crate::simlab::comparators::{frt_sharp_test, ht_asymptotic_test};
use crate::simlab::dgp::{DgpSpec, Noise, Scenario};
use crate::total::crt_total_test;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Total-effect CRT.
    Crt,
    /// Fisher test under a sharp null.
    Frt,
    /// Normal test of the studentized HT estimate.
    Asymptotic,
    /// m-carryover CRT at the configured `m`.
    Carryover,
    /// Non-anticipation test with holdout `2m + 1` unless configured.
    Pirt,
    /// Sequential horizon estimator; a rejection is an estimate above the
    /// true carryover horizon of the scenario.
    Sequential,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Crt => "crt",
            Method::Frt => "frt",
            Method::Asymptotic => "asymptotic",
            Method::Carryover => "carryover",
            Method::Pirt => "pirt",
            Method::Sequential => "sequential",
        })
    }
}

/// Assignment mechanism of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignRule {
    /// Optimal regular design with `n = T / m` blocks and probability 1/2.
    #[default]
    Optimal,
}

impl DesignRule {
    pub fn build(self, horizon: usize, m: usize) -> Result<SwitchbackDesign> {
        match self {
            DesignRule::Optimal => optimal_regular_design(horizon / m, m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(rename = "T")]
    pub t_grid: Vec<usize>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub design: DesignRule,
    pub scenarios: Vec<Scenario>,
    pub deltas: Vec<f64>,
    pub noises: Vec<Noise>,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<usize>,
}

fn default_m() -> usize {
    2
}

fn default_alpha() -> f64 {
    0.05
}

fn default_m_max() -> usize {
    4
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            t_grid: vec![60, 120],
            m: 2,
            design: DesignRule::Optimal,
            scenarios: vec![Scenario::Total],
            deltas: vec![0.0, 1.0, 2.0, 3.0],
            noises: vec![Noise::Gaussian, Noise::T1],
            methods: vec![Method::Crt, Method::Frt, Method::Asymptotic],
            reps: 1000,
            draws: 500,
            alpha: 0.05,
            seed: 2024,
            m_max: 4,
            holdout: None,
        }
    }
}

impl StudyConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: StudyConfig = serde_json::from_str(s).map_err(|e| Error::Parse(format!("study config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::Config { field: field.into(), reason });
        if self.reps == 0 {
            return bad("reps", "must be at least 1".into());
        }
        if self.draws == 0 {
            return bad("draws", "must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if self.m == 0 {
            return bad("m", "must be at least 1".into());
        }
        for (field, empty) in [
            ("T", self.t_grid.is_empty()),
            ("scenarios", self.scenarios.is_empty()),
            ("deltas", self.deltas.is_empty()),
            ("noises", self.noises.is_empty()),
            ("methods", self.methods.is_empty()),
        ] {
            if empty {
                return bad(field, "must not be empty".into());
            }
        }
        for &t in &self.t_grid {
            if t % self.m != 0 || t / self.m < 4 {
                return bad("T", format!("{t} must be a multiple of m = {} with at least 4 blocks of m", self.m));
            }
            if self.methods.contains(&Method::Sequential) && self.m_max >= t {
                return bad("m_max", format!("must be below T = {t}"));
            }
            if self.holdout.is_some_and(|l| l > t) {
                return bad("holdout", format!("exceeds T = {t}"));
            }
        }
        if let Some(d) = self.deltas.iter().find(|d| !d.is_finite()) {
            return bad("deltas", format!("must be finite, got {d}"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &horizon in &self.t_grid {
                for &delta in &self.deltas {
                    for &noise in &self.noises {
                        out.push(Cell { scenario, horizon, delta, noise });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub scenario: Scenario,
    pub horizon: usize,
    pub delta: f64,
    pub noise: Noise,
}

impl Cell {
    /// Seed depending on the cell's content, not its position in the grid.
    pub fn seed(&self, master: u64) -> u64 {
        let s = mix(master, self.scenario as u64);
        let s = mix(s, self.horizon as u64);
        let s = mix(s, self.delta.to_bits());
        mix(s, self.noise as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub scenario: Scenario,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub delta: f64,
    pub noise: Noise,
    pub method: Method,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// Replications that raised an error, per row.
    pub failures: Vec<usize>,
}

impl StudyTable {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn get(&self, scenario: Scenario, horizon: usize, delta: f64, noise: Noise, method: Method) -> Option<&StudyRow> {
        self.rows.iter().find(|r| {
            r.scenario == scenario && r.horizon == horizon && r.delta == delta && r.noise == noise && r.method == method
        })
    }
}

/// Apply one method to one simulated data set; `Ok(true)` is a rejection.
pub fn apply_method(
    method: Method,
    config: &StudyConfig,
    design: &SwitchbackDesign,
    dgp: &DgpSpec,
    observed: &crate::design::AssignmentPath,
    y: &[f64],
    seed: u64,
) -> Result<bool> {
    let (m, alpha) = (config.m, config.alpha);
    let opts = McOptions::new(config.draws, seed);
    Ok(match method {
        Method::Crt => crt_total_test(y, observed, design, m, &opts)?.rejects(alpha),
        Method::Frt => frt_sharp_test(y, observed, design, m, &opts)?.rejects(alpha),
        Method::Asymptotic => ht_asymptotic_test(y, observed, design, m, alpha)?.reject,
        Method::Carryover => {
            let family = greedy_pool(design, m)?;
            crt_carryover_test(y, observed, design, &family, m, &opts)?.rejects(alpha)
        }
        Method::Pirt => {
            let scheme = PrefixScheme { holdout: config.holdout.unwrap_or(2 * m + 1) };
            pirt_test(y, observed, design, scheme, &opts)?.rejects(alpha)
        }
        Method::Sequential => {
            sequential_m(y, observed, design, alpha, config.m_max, &opts)?.m_hat > dgp.carryover_horizon()
        }
    })
}

/// Rejection counts and failures for one cell, methods in config order.
pub fn run_cell(config: &StudyConfig, cell: Cell) -> Result<Vec<(usize, usize)>> {
    let design = config.design.build(cell.horizon, config.m)?;
    let dgp = cell.scenario.dgp(cell.delta, cell.noise, config.m);
    let outcomes = map_draws(config.reps, cell.seed(config.seed), |rng| {
        let observed = design.sample_assignment(rng);
        let y = dgp.simulate_outcomes(&observed, rng);
        let mc_seed = rng.next_u64();
        config
            .methods
            .iter()
            .enumerate()
            .map(|(i, &method)| {
                apply_method(method, config, &design, &dgp, &observed, &y, mix(mc_seed, i as u64)).map_err(|e| {
                    log::warn!("{} T={} delta={} {}: {method}: {e}", cell.scenario, cell.horizon, cell.delta, cell.noise);
                    e
                })
            })
            .collect::<Vec<_>>()
    });
    Ok((0..config.methods.len())
        .map(|i| {
            let hits = outcomes.iter().filter(|o| matches!(o[i], Ok(true))).count();
            let failed = outcomes.iter().filter(|o| o[i].is_err()).count();
            (hits, failed)
        })
        .collect())
}

/// Run every cell of the grid. Errors inside a replication are counted and
/// logged; the study itself only fails on an invalid configuration.
pub fn run_study(config: &StudyConfig) -> Result<StudyTable> {
    config.validate()?;
    let mut table = StudyTable::default();
    for cell in config.cells() {
        log::info!("cell {} T={} delta={} {}", cell.scenario, cell.horizon, cell.delta, cell.noise);
        let counts = run_cell(config, cell)?;
        for (&method, (hits, failed)) in config.methods.iter().zip(counts) {
            let ok = config.reps - failed;
            let (rate, se) = if ok == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let r = hits as f64 / ok as f64;
                (r, (r * (1.0 - r) / ok as f64).sqrt())
            };
            table.rows.push(StudyRow {
                scenario: cell.scenario,
                horizon: cell.horizon,
                delta: cell.delta,
                noise: cell.noise,
                method,
                rate,
                se,
            });
            table.failures.push(failed);
        }
    }
    Ok(table)
}
