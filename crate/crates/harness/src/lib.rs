//! Synthetic-data generation, metrics and Monte Carlo drivers for the
//! rank-revealing BTD solvers.

pub mod experiment;
pub mod generate;
pub mod metrics;
pub mod params;
pub mod report;

pub use experiment::{
    run_experiment1, run_experiment2, run_stream, Experiment1Config, Experiment2Config, Experiment2Report,
    ExperimentReport, Solver, StreamRun,
};
pub use generate::{add_noise, generate, BlockRanks, ChangePoint, GenSpec, NoiseSpec, Truth};
pub use metrics::{hungarian, nmse_blocks, nse, relative_error};
