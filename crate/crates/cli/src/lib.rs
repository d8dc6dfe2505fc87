//! Config parsing, solver dispatch and figure presets behind the
//! `superburst` command.

pub mod config;
pub mod preset;
pub mod runner;
