//! Evaluation side of the optimization: a configuration goes in, a training
//! curve and its best validation accuracy come out.
//!
//! Two implementations are provided: [`SimulatedBlackbox`], a deterministic
//! learning-curve generator used for desk-scale verification, and
//! [`ExternalBlackbox`], which drives a real trainer over a line protocol.

mod external;
mod simulated;

pub use external::{ExternalBlackbox, ExternalSettings};
pub use simulated::{
    lattice_sweep, simulate_curve, SimulatedBlackbox, SimulatedModel, SimulatedTask,
};

use crate::early_stop::{StopReason, StopVerdict, TrainingHistory};
use crate::space::Configuration;

/// What a monitor decides after seeing one more epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorDecision {
    pub verdict: StopVerdict,
    /// Learning rate for the next epoch.
    pub next_lr: f64,
}

/// Called once per epoch, from the evaluation's own control flow.
pub trait EpochMonitor {
    fn observe(&mut self, history: &TrainingHistory) -> MonitorDecision;
}

/// Monitor that never stops and never touches the learning rate.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeverStop;

impl EpochMonitor for NeverStop {
    fn observe(&mut self, history: &TrainingHistory) -> MonitorDecision {
        MonitorDecision {
            verdict: StopVerdict::proceed(),
            next_lr: history.last().map(|r| r.learning_rate).unwrap_or(1.0),
        }
    }
}

pub const DEFAULT_MAX_EPOCHS: usize = 200;

pub struct EvaluationRequest<'a> {
    pub config: &'a Configuration,
    pub max_epochs: usize,
    pub data_fraction: f64,
    pub seed: u64,
    pub monitor: Option<&'a mut dyn EpochMonitor>,
}

impl<'a> EvaluationRequest<'a> {
    pub fn new(config: &'a Configuration, seed: u64) -> Self {
        Self {
            config,
            max_epochs: DEFAULT_MAX_EPOCHS,
            data_fraction: 1.0,
            seed,
            monitor: None,
        }
    }

    pub fn epochs(mut self, max_epochs: usize) -> Self {
        self.max_epochs = max_epochs;
        self
    }

    pub fn fraction(mut self, data_fraction: f64) -> Self {
        self.data_fraction = data_fraction;
        self
    }

    pub fn monitor(mut self, monitor: &'a mut dyn EpochMonitor) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.max_epochs == 0 {
            return Err("max_epochs must be at least 1".into());
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(format!(
                "data fraction {} outside (0, 1]",
                self.data_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationResult {
    pub history: TrainingHistory,
    /// Best accuracy over the history.
    pub final_val_accuracy: f64,
    pub epochs_used: usize,
    pub stop_reason: StopReason,
    /// Abstract cost: epochs weighted by data fraction.
    pub wall_cost: f64,
    /// Set when the evaluation could not be carried out.
    pub failure: Option<String>,
}

impl EvaluationResult {
    /// Worst possible score.
    pub const WORST: f64 = 0.0;

    pub fn completed(
        history: TrainingHistory,
        stop_reason: StopReason,
        data_fraction: f64,
    ) -> Self {
        let epochs_used = history.len();
        Self {
            final_val_accuracy: history.best_accuracy(),
            epochs_used,
            stop_reason,
            wall_cost: epochs_used as f64 * data_fraction,
            history,
            failure: None,
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            history: TrainingHistory::new(),
            final_val_accuracy: Self::WORST,
            epochs_used: 0,
            stop_reason: StopReason::None,
            wall_cost: 0.0,
            failure: Some(message.into()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

pub trait Blackbox {
    fn evaluate(&mut self, request: EvaluationRequest<'_>) -> EvaluationResult;
}

impl<B: Blackbox + ?Sized> Blackbox for &mut B {
    fn evaluate(&mut self, request: EvaluationRequest<'_>) -> EvaluationResult {
        (**self).evaluate(request)
    }
}

impl<B: Blackbox + ?Sized> Blackbox for Box<B> {
    fn evaluate(&mut self, request: EvaluationRequest<'_>) -> EvaluationResult {
        (**self).evaluate(request)
    }
}
