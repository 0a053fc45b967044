//! Experiment runner: dataset generation, training of every
//! (strategy, seed) cell, checkpoint evaluation and summary tables.

pub mod config;
pub mod oracles;
pub mod pipeline;
pub mod selftest;

pub use config::{ExperimentConfig, ModelConfig, OUTPUT_DIR_ENV};
pub use pipeline::{cmd_eval, cmd_gen, cmd_report, cmd_run, run_grid, Stat, Summary};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const RUNTIME: i32 = 2;
    pub const SELFTEST: i32 = 3;
}
