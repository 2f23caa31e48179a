//! Experiment driver used by the `gntk` binary and the acceptance suite.

pub mod experiment;
pub mod report;
