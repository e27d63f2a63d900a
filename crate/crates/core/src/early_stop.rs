//! Early stopping of a training run from its observed validation curve.
//!
//! Four strategies are available ([`StopMode`]): the default low-accuracy
//! and loss-plateau rules, a last-success window, a plateau scheduler that
//! divides the learning rate until it falls below a floor, and the scheduler
//! combined with a comparison against the best network seen so far
//! ([`BaselineEnvelope`]).
//!
//! A "new running maximum" at epoch `e` means the accuracy at `e` is
//! strictly above every earlier epoch. The first epoch has nothing to beat
//! and never counts as one; plateau and last-success windows therefore start
//! at epoch 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blackbox::{EpochMonitor, MonitorDecision};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

/// Per-epoch validation series of one training run. Epochs are contiguous
/// from 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a history from accuracies, with a constant learning rate and a
    /// loss derived from the accuracy.
    pub fn from_accuracies(acc: &[f64], learning_rate: f64) -> Self {
        let mut h = Self::new();
        for &a in acc {
            h.push_next(a, (1.0 - a).max(0.0), learning_rate);
        }
        h
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        let expected = self.records.len() + 1;
        if record.epoch != expected {
            return Err(Error::History(format!(
                "expected epoch {expected}, got {}",
                record.epoch
            )));
        }
        if !(0.0..=1.0).contains(&record.val_accuracy) {
            return Err(Error::History(format!(
                "accuracy {} outside [0, 1] at epoch {}",
                record.val_accuracy, record.epoch
            )));
        }
        if record.val_loss.is_nan()
            || record.val_loss < 0.0
            || record.learning_rate.is_nan()
            || record.learning_rate <= 0.0
        {
            return Err(Error::History(format!(
                "loss must be non-negative and learning rate positive at epoch {}",
                record.epoch
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends the next epoch. Panics on out-of-range values.
    pub fn push_next(&mut self, val_accuracy: f64, val_loss: f64, learning_rate: f64) {
        let epoch = self.records.len() + 1;
        self.push(EpochRecord {
            epoch,
            val_accuracy,
            val_loss,
            learning_rate,
        })
        .expect("valid epoch record");
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn current_epoch(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Accuracy recorded at `epoch` (1-based).
    pub fn accuracy_at(&self, epoch: usize) -> Option<f64> {
        epoch
            .checked_sub(1)
            .and_then(|i| self.records.get(i))
            .map(|r| r.val_accuracy)
    }

    /// Best accuracy over the whole run, 0 when empty.
    pub fn best_accuracy(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.val_accuracy)
            .fold(0.0, f64::max)
    }

    /// Last epoch that set a new running maximum, 0 if none did.
    pub fn last_improvement_epoch(&self) -> usize {
        let mut best = f64::NEG_INFINITY;
        let mut last = 0;
        for r in &self.records {
            if r.val_accuracy > best {
                if r.epoch > 1 {
                    last = r.epoch;
                }
                best = r.val_accuracy;
            }
        }
        last
    }

    /// Epoch at which the most recent learning-rate reduction was decided,
    /// i.e. the epoch before the first record carrying the reduced rate.
    pub fn last_reduction_epoch(&self) -> usize {
        self.records
            .windows(2)
            .rev()
            .find(|w| w[1].learning_rate < w[0].learning_rate)
            .map(|w| w[0].epoch)
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    None,
    DefaultLowAccuracy,
    DefaultLossPlateau,
    LastSuccess,
    SchedulerLrFloor,
    EnvelopeBreach,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::None => "none",
            StopReason::DefaultLowAccuracy => "default-low-accuracy",
            StopReason::DefaultLossPlateau => "default-loss-plateau",
            StopReason::LastSuccess => "last-success",
            StopReason::SchedulerLrFloor => "scheduler-lr-floor",
            StopReason::EnvelopeBreach => "envelope-breach",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            StopReason::None,
            StopReason::DefaultLowAccuracy,
            StopReason::DefaultLossPlateau,
            StopReason::LastSuccess,
            StopReason::SchedulerLrFloor,
            StopReason::EnvelopeBreach,
        ]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| Error::Ledger(format!("unknown stop reason `{s}`")))
    }
}

/// Continue or stop, with the rule that fired.
#[derive(Clone, Debug, PartialEq)]
pub struct StopVerdict {
    pub reason: StopReason,
    pub detail: String,
}

impl StopVerdict {
    pub fn proceed() -> Self {
        Self {
            reason: StopReason::None,
            detail: String::new(),
        }
    }

    pub fn stop(reason: StopReason, detail: impl Into<String>) -> Self {
        debug_assert!(reason != StopReason::None);
        Self {
            reason,
            detail: detail.into(),
        }
    }

    pub fn should_stop(&self) -> bool {
        self.reason != StopReason::None
    }
}

/// Early-stopping strategy of a campaign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopMode {
    /// Train every candidate for its full epoch budget.
    None,
    Default,
    LastSuccess,
    Scheduler,
    SchedulerBaseline,
}

impl StopMode {
    pub fn name(self) -> &'static str {
        match self {
            StopMode::None => "none",
            StopMode::Default => "default",
            StopMode::LastSuccess => "last-success",
            StopMode::Scheduler => "scheduler",
            StopMode::SchedulerBaseline => "scheduler+baseline",
        }
    }

    pub fn uses_scheduler(self) -> bool {
        matches!(self, StopMode::Scheduler | StopMode::SchedulerBaseline)
    }
}

impl fmt::Display for StopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(StopMode::None),
            "default" => Ok(StopMode::Default),
            "last-success" => Ok(StopMode::LastSuccess),
            "scheduler" => Ok(StopMode::Scheduler),
            "scheduler+baseline" | "scheduler-baseline" => Ok(StopMode::SchedulerBaseline),
            other => Err(Error::UnknownStopMode(other.to_string())),
        }
    }
}

/// Thresholds of the stopping rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingParams {
    pub low_accuracy_epoch: usize,
    pub low_accuracy_threshold: f64,
    pub plateau_window: usize,
    pub plateau_std: f64,
    pub last_success_window: usize,
    pub patience: usize,
    pub factor: f64,
    pub lr_floor: f64,
}

impl Default for StoppingParams {
    fn default() -> Self {
        Self {
            low_accuracy_epoch: 25,
            low_accuracy_threshold: 0.12,
            plateau_window: 50,
            plateau_std: 1e-3,
            last_success_window: 25,
            patience: 25,
            factor: 0.1,
            lr_floor: 1e-8,
        }
    }
}

/// Default rules: accuracy never above 12% after 25 epochs, or population
/// standard deviation of the last 50 losses below `1e-3`.
pub fn check_default(history: &TrainingHistory) -> StopVerdict {
    check_default_with(history, &StoppingParams::default())
}

pub fn check_default_with(history: &TrainingHistory, p: &StoppingParams) -> StopVerdict {
    let epoch = history.current_epoch();
    if epoch >= p.low_accuracy_epoch && history.best_accuracy() <= p.low_accuracy_threshold {
        return StopVerdict::stop(
            StopReason::DefaultLowAccuracy,
            format!(
                "best accuracy {} <= {} after {epoch} epochs",
                history.best_accuracy(),
                p.low_accuracy_threshold
            ),
        );
    }
    if p.plateau_window > 0 && history.len() >= p.plateau_window {
        let tail = &history.records()[history.len() - p.plateau_window..];
        let n = tail.len() as f64;
        let mean = tail.iter().map(|r| r.val_loss).sum::<f64>() / n;
        let var = tail
            .iter()
            .map(|r| (r.val_loss - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std < p.plateau_std {
            return StopVerdict::stop(
                StopReason::DefaultLossPlateau,
                format!("loss std {std:e} over last {} epochs", p.plateau_window),
            );
        }
    }
    StopVerdict::proceed()
}

/// Stops once the last new running maximum is more than `window` epochs old.
pub fn check_last_success(history: &TrainingHistory, window: usize) -> StopVerdict {
    let current = history.current_epoch();
    let last = history.last_improvement_epoch();
    if current - last > window {
        StopVerdict::stop(
            StopReason::LastSuccess,
            format!("no improvement since epoch {last} (now {current})"),
        )
    } else {
        StopVerdict::proceed()
    }
}

/// Plateau scheduler.
///
/// When no new running maximum has been seen for `patience` epochs since
/// the later of the last improvement and the last reduction, the learning
/// rate is multiplied by `factor`. Stops when the new rate falls strictly
/// below `lr_floor`. The current rate is the one of the last record.
pub fn scheduler_step(
    history: &TrainingHistory,
    patience: usize,
    factor: f64,
    lr_floor: f64,
) -> Result<(f64, StopVerdict)> {
    if factor.is_nan() || factor <= 0.0 {
        return Err(Error::Scheduler(format!(
            "factor must be positive, got {factor}"
        )));
    }
    if lr_floor.is_nan() || lr_floor <= 0.0 {
        return Err(Error::Scheduler(format!(
            "floor must be positive, got {lr_floor}"
        )));
    }
    let Some(last) = history.last() else {
        return Err(Error::History("scheduler needs at least one epoch".into()));
    };
    let current_lr = last.learning_rate;
    let anchor = history
        .last_improvement_epoch()
        .max(history.last_reduction_epoch());
    if history.current_epoch() - anchor < patience {
        return Ok((current_lr, StopVerdict::proceed()));
    }
    let new_lr = current_lr * factor;
    let verdict = if new_lr < lr_floor {
        StopVerdict::stop(
            StopReason::SchedulerLrFloor,
            format!("learning rate {new_lr:e} below floor {lr_floor:e}"),
        )
    } else {
        StopVerdict::proceed()
    };
    Ok((new_lr, verdict))
}

/// Best network seen so far and the margins it imposes at milestone epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEnvelope {
    pub baseline: Option<TrainingHistory>,
    milestones: Vec<usize>,
    margins: Vec<f64>,
    /// Reference accuracies at or below this level disable the comparison.
    pub chance: f64,
}

impl Default for BaselineEnvelope {
    fn default() -> Self {
        Self {
            baseline: None,
            milestones: vec![5, 10, 25, 50, 100, 125, 150],
            margins: vec![0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95],
            chance: 0.1,
        }
    }
}

impl BaselineEnvelope {
    pub fn new(milestones: Vec<usize>, margins: Vec<f64>) -> Result<Self> {
        if milestones.len() != margins.len() {
            return Err(Error::Envelope(format!(
                "{} milestones but {} margins",
                milestones.len(),
                margins.len()
            )));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) || milestones.first() == Some(&0) {
            return Err(Error::Envelope(
                "milestones must be positive and strictly increasing".into(),
            ));
        }
        if margins.windows(2).any(|w| w[0] >= w[1])
            || margins.iter().any(|m| !(*m > 0.0 && *m <= 1.0))
        {
            return Err(Error::Envelope(
                "margins must be strictly increasing in (0, 1]".into(),
            ));
        }
        Ok(Self {
            baseline: None,
            milestones,
            margins,
            ..Self::default()
        })
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn with_baseline(mut self, baseline: TrainingHistory) -> Self {
        self.baseline = Some(baseline);
        self
    }

    /// Baseline accuracy used at `epoch`: its value at that epoch, or its
    /// best accuracy when it stopped earlier.
    pub fn reference_at(&self, epoch: usize) -> Option<f64> {
        let b = self.baseline.as_ref()?;
        b.accuracy_at(epoch)
            .or_else(|| (!b.is_empty()).then(|| b.best_accuracy()))
    }

    /// Lower bound imposed at `epoch`, if it is a milestone and the envelope
    /// is armed.
    pub fn bound_at(&self, epoch: usize) -> Option<f64> {
        let i = self.milestones.iter().position(|m| *m == epoch)?;
        let reference = self.reference_at(epoch)?;
        (reference > self.chance).then(|| self.margins[i] * reference)
    }
}

/// Compares the candidate with the baseline at milestone epochs only.
pub fn check_envelope(history: &TrainingHistory, envelope: &BaselineEnvelope) -> StopVerdict {
    let epoch = history.current_epoch();
    let (Some(bound), Some(acc)) = (envelope.bound_at(epoch), history.accuracy_at(epoch)) else {
        return StopVerdict::proceed();
    };
    if acc < bound {
        StopVerdict::stop(
            StopReason::EnvelopeBreach,
            format!("accuracy {acc} below envelope {bound} at epoch {epoch}"),
        )
    } else {
        StopVerdict::proceed()
    }
}

/// Replaces the baseline when the candidate strictly beats the incumbent,
/// or unconditionally when no baseline exists yet.
pub fn update_baseline(
    envelope: BaselineEnvelope,
    candidate_history: &TrainingHistory,
    candidate_final: f64,
    incumbent_final: f64,
) -> BaselineEnvelope {
    if envelope.baseline.is_none() || candidate_final > incumbent_final {
        envelope.with_baseline(candidate_history.clone())
    } else {
        envelope
    }
}

/// Verdict of `mode` at the current epoch. The scheduler's learning-rate
/// update is not returned here; see [`EarlyStopMonitor`].
pub fn combined_verdict(
    history: &TrainingHistory,
    envelope: &BaselineEnvelope,
    mode: StopMode,
    params: &StoppingParams,
) -> Result<StopVerdict> {
    Ok(match mode {
        StopMode::None => StopVerdict::proceed(),
        StopMode::Default => check_default_with(history, params),
        StopMode::LastSuccess => check_last_success(history, params.last_success_window),
        StopMode::Scheduler => {
            scheduler_step(history, params.patience, params.factor, params.lr_floor)?.1
        }
        StopMode::SchedulerBaseline => {
            let env = check_envelope(history, envelope);
            if env.should_stop() {
                env
            } else {
                scheduler_step(history, params.patience, params.factor, params.lr_floor)?.1
            }
        }
    })
}

/// Per-epoch monitor applying a [`StopMode`] during an evaluation.
#[derive(Clone, Debug)]
pub struct EarlyStopMonitor {
    pub mode: StopMode,
    pub envelope: BaselineEnvelope,
    pub params: StoppingParams,
}

impl EarlyStopMonitor {
    pub fn new(mode: StopMode, envelope: BaselineEnvelope, params: StoppingParams) -> Self {
        Self {
            mode,
            envelope,
            params,
        }
    }
}

impl EpochMonitor for EarlyStopMonitor {
    fn observe(&mut self, history: &TrainingHistory) -> MonitorDecision {
        let current_lr = history.last().map(|r| r.learning_rate).unwrap_or(1.0);
        let p = &self.params;
        let (next_lr, verdict) = match self.mode {
            StopMode::None => (current_lr, StopVerdict::proceed()),
            StopMode::Default => (current_lr, check_default_with(history, p)),
            StopMode::LastSuccess => (
                current_lr,
                check_last_success(history, p.last_success_window),
            ),
            StopMode::Scheduler | StopMode::SchedulerBaseline => {
                let (lr, sched) = scheduler_step(history, p.patience, p.factor, p.lr_floor)
                    .unwrap_or((current_lr, StopVerdict::proceed()));
                let env = if self.mode == StopMode::SchedulerBaseline {
                    check_envelope(history, &self.envelope)
                } else {
                    StopVerdict::proceed()
                };
                (lr, if env.should_stop() { env } else { sched })
            }
        };
        MonitorDecision { verdict, next_lr }
    }
}
