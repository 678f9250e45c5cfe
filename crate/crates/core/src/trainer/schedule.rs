//! Plateau learning-rate schedule with restarts from the best model.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleAction {
    Continue,
    HalveLr,
    Restart,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub lr_patience: usize,
    pub restart_patience: usize,
    pub restart_lr_decay: f64,
    pub max_restarts: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr_patience: 10,
            restart_patience: 32,
            restart_lr_decay: 0.9,
            max_restarts: 2,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.lr_patience == 0 {
            errs.push("train.lr_patience must be >= 1".into());
        }
        if self.restart_patience == 0 {
            errs.push("train.restart_patience must be >= 1".into());
        }
        if !(self.restart_lr_decay > 0.0 && self.restart_lr_decay <= 1.0) {
            errs.push(format!(
                "train.restart_lr_decay must be in (0, 1], got {}",
                self.restart_lr_decay
            ));
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lr: f64,
    pub initial_lr: f64,
    /// `-1` until the first validation result.
    pub best_val_acc: f64,
    pub epochs_since_improve_lr: usize,
    pub epochs_since_improve_restart: usize,
    pub restarts_used: usize,
    pub phase: Phase,
}

impl ScheduleState {
    pub fn new(initial_lr: f64, phase: Phase) -> Self {
        assert!(initial_lr > 0.0, "learning rate must be positive");
        ScheduleState {
            lr: initial_lr,
            initial_lr,
            best_val_acc: -1.0,
            epochs_since_improve_lr: 0,
            epochs_since_improve_restart: 0,
            restarts_used: 0,
            phase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub state: ScheduleState,
    pub action: ScheduleAction,
    /// The epoch set a new best validation accuracy.
    pub improved: bool,
}

/// Advance the schedule by one epoch's validation accuracy.
///
/// A strictly better accuracy resets both stagnation counters. Otherwise both
/// grow; reaching `restart_patience` restarts (baseline, while restarts
/// remain) or stops, and reaching `lr_patience` halves the learning rate.
pub fn step_schedule(state: &ScheduleState, val_acc: f64, config: &ScheduleConfig) -> ScheduleStep {
    let mut s = *state;
    if val_acc > s.best_val_acc {
        s.best_val_acc = val_acc;
        s.epochs_since_improve_lr = 0;
        s.epochs_since_improve_restart = 0;
        return ScheduleStep {
            state: s,
            action: ScheduleAction::Continue,
            improved: true,
        };
    }
    s.epochs_since_improve_lr += 1;
    s.epochs_since_improve_restart += 1;
    let action = if s.epochs_since_improve_restart >= config.restart_patience {
        if s.phase == Phase::Baseline && s.restarts_used < config.max_restarts {
            s.restarts_used += 1;
            s.lr = s.initial_lr * config.restart_lr_decay.powi(s.restarts_used as i32);
            s.epochs_since_improve_lr = 0;
            s.epochs_since_improve_restart = 0;
            ScheduleAction::Restart
        } else {
            ScheduleAction::Stop
        }
    } else if s.epochs_since_improve_lr >= config.lr_patience {
        s.lr *= 0.5;
        s.epochs_since_improve_lr = 0;
        ScheduleAction::HalveLr
    } else {
        ScheduleAction::Continue
    };
    ScheduleStep {
        state: s,
        action,
        improved: false,
    }
}
