use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Epochs during which only best-weight tracking is active.
    pub burn_in: usize,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub lr_factor: f64,
    pub lr_floor: f64,
    pub max_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { burn_in: 30, lr_patience: 10, stop_patience: 30, lr_factor: 10.0, lr_floor: 1e-7, max_epochs: 250 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Continue,
    /// Restore the best snapshot, then continue at `lr`.
    ReduceLrAndRestore { lr: f64 },
    StopAndRestore(StopReason),
}

/// Outcome of one epoch's bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// The epoch set a new best; the caller snapshots weights and optimizer.
    pub improved: bool,
    pub action: Action,
}

/// Counters of the burn-in / patience / early-stop schedule.
///
/// The lr counter resets on a new best and after every reduction; the stop
/// counter resets only on a new best. Neither counts during burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub config: ScheduleConfig,
    pub epoch: usize,
    pub lr: f64,
    pub lr_counter: usize,
    pub stop_counter: usize,
    pub best_val_mse: f64,
    pub best_epoch: usize,
}

impl ScheduleState {
    pub fn new(config: ScheduleConfig, lr: f64) -> Self {
        Self {
            config,
            epoch: 0,
            lr,
            lr_counter: 0,
            stop_counter: 0,
            best_val_mse: f64::INFINITY,
            best_epoch: 0,
        }
    }
}

/// Records the validation MSE of the epoch just finished.
pub fn schedule_update(state: &mut ScheduleState, val_mse: f64) -> Decision {
    state.epoch += 1;
    let cfg = state.config;
    let improved = val_mse < state.best_val_mse;
    if improved {
        state.best_val_mse = val_mse;
        state.best_epoch = state.epoch;
        state.lr_counter = 0;
        state.stop_counter = 0;
    } else if state.epoch > cfg.burn_in {
        state.lr_counter += 1;
        state.stop_counter += 1;
    }
    let action = if state.stop_counter >= cfg.stop_patience {
        Action::StopAndRestore(StopReason::EarlyStop)
    } else if state.epoch >= cfg.max_epochs {
        Action::StopAndRestore(StopReason::MaxEpochs)
    } else if state.lr_counter >= cfg.lr_patience {
        state.lr_counter = 0;
        if state.lr > cfg.lr_floor {
            let next = state.lr / cfg.lr_factor;
            // Repeated division drifts by an ulp (1e-3 / 10^4 > 1e-7); snap
            // to the floor instead of scheduling one more tiny reduction.
            state.lr = if next <= cfg.lr_floor * (1.0 + 1e-9) { cfg.lr_floor } else { next };
            Action::ReduceLrAndRestore { lr: state.lr }
        } else {
            Action::Continue
        }
    } else {
        Action::Continue
    };
    Decision { improved, action }
}
