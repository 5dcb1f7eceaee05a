//! Adam training with plateau learning-rate decay, early stopping on the
//! validation loss, and a multi-seed run harness.

mod adam;
mod fit;
mod multi_run;
mod schedule;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use fit::{
    batch_indices, evaluate_loss, fit, fit_with_init, train_epoch, EpochRecord, FitOutcome,
    TrainConfig,
};
pub use multi_run::{aggregate, multi_run, run_seed, MetricSummary, RunAggregate, RunOutcome};
pub use schedule::{Plateau, PlateauAction};
