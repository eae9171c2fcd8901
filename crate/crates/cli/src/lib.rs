//! Experiment drivers and file formats behind the `conveyance` binary.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
