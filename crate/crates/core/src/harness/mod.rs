//! Configuration files, checkpoints, result export and the command
//! implementations behind the CLI.

mod checkpoint;
mod commands;
mod config;
mod output;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use commands::{
    cmd_eval, cmd_score, cmd_sweep, cmd_train, configure_threads, parse_methods, EvalOutput, ScoreOutput,
    ScoreRequest, SweepFiles, TrainOutput, THREADS_ENV,
};
pub use config::ExperimentConfig;
pub use output::{
    pgm_bytes, read_results_csv, write_atomic, write_history_csv, write_maps_csv, write_pgm, write_results_csv,
    write_scores_csv, write_summary_csv, FileFingerprint, RunManifest, Seeds, Timings, RESULT_COLUMNS,
};
