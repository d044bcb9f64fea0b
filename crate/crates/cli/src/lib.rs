//! Experiment orchestration behind the `physmeta` binary.

pub mod commands;
pub mod config;
pub mod runs;
