//! Experiment driver for the `ewc` toolkit: configuration, checkpoints,
//! reports and the command implementations behind the `ewc` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;
