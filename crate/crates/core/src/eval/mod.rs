//! Detection metrics and the experiment drivers built on them.

mod experiment;
mod metrics;
mod sweep;

pub use experiment::{
    anomaly_corpus, auroc_metrics, Metric, STREAM_ANOMALIES, STREAM_CALIBRATION, STREAM_TEST_POOL, calibration_split, evaluate_maps, loco_experiment, pixel_experiment, run_experiment,
    sample_aurocs, sample_test_pool, train_point, Benchmark, ExperimentOptions, ExperimentResult, LocoResult,
    PixelMetrics, PixelResult, SweepPoint, TrainedModel,
};
pub use metrics::{
    auroc, calibrate_threshold, dice, mean_dice, quantile_candidates, Calibration, LabeledScores, ScoredMask,
    THRESHOLD_CANDIDATES,
};
pub use sweep::{
    run_sweep, run_sweep_with, summarize, Axis, ExperimentRecord, ResultRow, SummaryRow, SweepAxis, SweepEntry,
    SweepOutcome, SweepSpec, SCHEMA_VERSION,
};
