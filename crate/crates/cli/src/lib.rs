//! Experiment runner behind the `softseg` binary.
//!
//! A JSON config names a benchmark, the methods to fit and the seeds. Each
//! subcommand writes its tables under `<out>/<name>/<config-hash>/`.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, MethodSpec, SweepAxis, SweepSpec};
pub use run::{run_panel, run_runtime, run_sweep, run_theory, PanelOutcome, RunRow, SweepOutcome, TheoryOutcome};
