//! Adam, the burn-in / patience schedule, fold training and ensembling.

mod adam;
mod fold;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fold::{
    belly_prediction, derive_seed, ensemble_predict, epoch_eval, prepare_sample, sample_loss, sample_loss_grad, train_fold,
    FoldResult, PreparedSample, Sample, TrainConfig,
};
pub use schedule::{schedule_update, Action, Decision, ScheduleConfig, ScheduleState, StopReason};
