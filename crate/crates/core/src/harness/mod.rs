//! Experiment orchestration: configuration, reports, the bench grid and the
//! `trajctl` command line.

pub mod bench;
pub mod cli;
pub mod config;
pub mod report;

pub use bench::{grid_cells, median, prepare_seed, run_cells, write_bench_csv, BenchCell, BenchOptions, BenchRow, SeedBase};
pub use config::{BenchConfig, BenchMethod, BenchPreset, ExperimentConfig};
pub use report::{hash_file, RunReport};
