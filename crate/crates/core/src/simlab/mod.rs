//! Simulation laboratory: the outcome model with heteroskedastic,
//! treatment-history gated noise, comparator tests and a replication study
//! harness producing long-format rejection tables.

pub mod comparators;
pub mod dgp;
pub mod powersim;
pub mod study;
pub mod svg;

pub use comparators::{frt_sharp_test, ht_asymptotic_test, AsymptoticResult};
pub use dgp::{DgpSpec, Noise, Scenario, TimeEffect};
pub use powersim::{simulate_power, EmpiricalPower, PowerTarget};
pub use study::{run_study, Method, StudyConfig, StudyRow, StudyTable};
