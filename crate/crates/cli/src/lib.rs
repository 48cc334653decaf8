//! Experiment harness: derivative benchmarks, single solves, DoF sweeps and
//! randomized trials, all reported as CSV.

pub mod bench;
pub mod commands;
pub mod pin;
pub mod record;
