//! Experiment harness: configuration, tuning runs, metrics and artifacts.

pub mod config;
pub mod metrics;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{BanditSettings, Method, PolicySpec, RunConfig};
pub use metrics::{aggregate, cumulative_regret, mean_std, Curve};
pub use output::{emit_outputs, read_records, summary_table, write_records, write_reports};
pub use run::{build_policy, generate_pools, initial_prompt, load_pools, run_cell, run_tuning, PoolSet, RoundRecord};
