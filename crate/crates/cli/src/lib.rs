//! Scenario generation, experiment orchestration and report emission for
//! the `colrec` command-line tool.
//!
//! * [`config`]: scenario documents and their materialization.
//! * [`commands`]: runs, checks, the finder, robustness probes, matrix
//!   completion demos and parallel sweeps.
//! * [`report`]: report types with canonical JSON and CSV encodings.

pub mod commands;
pub mod config;
pub mod report;
