//! Config-driven experiments around `pwh_core`: kernel files, experiment
//! configs, and the runner behind the `pwhid` binary.

pub mod config;
pub mod kernel_io;
pub mod run;
