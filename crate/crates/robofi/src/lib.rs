//! Dataset containers, importers, training orchestration, evaluation
//! protocols, reports and the `robofi` command line, built on
//! `robofi-core`.

pub mod cli;
pub mod config;
pub mod container;
pub mod fit;
pub mod import;
pub mod prepare;
pub mod protocols;
pub mod report;
pub mod rundir;
