//! Training, sampling, verification, benchmark and ablation drivers.

pub mod ablate;
pub mod bench;
pub mod check;
pub mod config;
pub mod sample;
pub mod train;
