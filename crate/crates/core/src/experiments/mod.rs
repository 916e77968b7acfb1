//! Experiment drivers: each returns an [`ExperimentReport`] that is a pure
//! function of its config and seed.

pub mod gan;
pub mod gradcheck;
pub mod hurst;
pub mod inversion;
pub mod report;
pub mod train;

pub use report::ExperimentReport;
