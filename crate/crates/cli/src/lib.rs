//! Command-line experiments for Voronoi-guided test-time adaptation.
//!
//! `run`, `ablate`, `sweep` and `render` all take an [`ExperimentSpec`],
//! built from an optional flat TOML file and flag overrides, and write
//! their outputs atomically under `spec.out`.

pub mod commands;
pub mod error;
pub mod output;
pub mod spec;

pub use commands::{cmd_ablate, cmd_render, cmd_run, cmd_sweep};
pub use error::{CliError, Result};
pub use spec::{Diagram, ExperimentSpec, Overrides, SweepAxis};
