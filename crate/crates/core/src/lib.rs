//! Randomization inference for switchback experiments.

pub mod anticipation;
pub mod carryover;
pub mod cli;
pub mod design;
pub mod error;
pub mod numerics;
pub mod parallel;
pub mod power;
pub mod report;
pub mod sections;
pub mod simlab;
pub mod total;
pub mod weaknull;

pub use design::{optimal_regular_design, AssignmentPath, SwitchbackDesign};
pub use error::{Error, Result};
pub use numerics::{RngStream, StreamRng};
pub use report::{McOptions, Sidedness, TestReport};
