//! File formats and subcommands for the `meq` binary.
//!
//! This crate owns every file read and write; the core library only hands
//! back values.

pub mod checkpoint;
pub mod commands;
pub mod tables;
