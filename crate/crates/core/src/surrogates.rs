//! Static low-fidelity estimators used to order poll candidates before they
//! are evaluated at full fidelity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blackbox::{Blackbox, EvaluationRequest, EvaluationResult, DEFAULT_MAX_EPOCHS};
use crate::error::{Error, Result};
use crate::poll::PollCandidate;
use crate::space::Configuration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurrogateKind {
    R1,
    R2,
    R3,
    R4,
    None,
    Oracle,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub epoch_budget: usize,
    pub data_fraction: f64,
    pub cost_ratio: f64,
}

impl SurrogateSpec {
    pub const R1: Self = Self::table(SurrogateKind::R1, 25, 1.0, 0.125);
    pub const R2: Self = Self::table(SurrogateKind::R2, 10, 1.0, 0.05);
    pub const R3: Self = Self::table(SurrogateKind::R3, 200, 0.2, 0.20);
    pub const R4: Self = Self::table(SurrogateKind::R4, 200, 0.1, 0.10);
    /// The full objective itself.
    pub const ORACLE: Self = Self::table(SurrogateKind::Oracle, DEFAULT_MAX_EPOCHS, 1.0, 1.0);
    pub const NONE: Self = Self::table(SurrogateKind::None, 0, 1.0, 0.0);

    const fn table(
        kind: SurrogateKind,
        epoch_budget: usize,
        data_fraction: f64,
        cost_ratio: f64,
    ) -> Self {
        Self {
            kind,
            epoch_budget,
            data_fraction,
            cost_ratio,
        }
    }

    pub fn custom(epoch_budget: usize, data_fraction: f64, cost_ratio: f64) -> Result<Self> {
        let s = Self::table(
            SurrogateKind::Custom,
            epoch_budget,
            data_fraction,
            cost_ratio,
        );
        s.check()?;
        Ok(s)
    }

    /// Oracle evaluated at a campaign's own epoch budget.
    pub fn oracle(max_epochs: usize) -> Self {
        Self {
            epoch_budget: max_epochs,
            ..Self::ORACLE
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == SurrogateKind::None
    }

    pub fn check(&self) -> Result<()> {
        if self.is_none() {
            return Ok(());
        }
        let ok = self.epoch_budget >= 1
            && self.data_fraction > 0.0
            && self.data_fraction <= 1.0
            && self.cost_ratio > 0.0
            && self.cost_ratio <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::UnknownSurrogate(format!(
                "invalid surrogate ({} epochs, fraction {}, cost {})",
                self.epoch_budget, self.data_fraction, self.cost_ratio
            )))
        }
    }
}

impl fmt::Display for SurrogateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SurrogateKind::R1 => f.write_str("r1"),
            SurrogateKind::R2 => f.write_str("r2"),
            SurrogateKind::R3 => f.write_str("r3"),
            SurrogateKind::R4 => f.write_str("r4"),
            SurrogateKind::None => f.write_str("none"),
            SurrogateKind::Oracle => f.write_str("oracle"),
            SurrogateKind::Custom => write!(
                f,
                "custom:{}:{}:{}",
                self.epoch_budget, self.data_fraction, self.cost_ratio
            ),
        }
    }
}

impl FromStr for SurrogateSpec {
    type Err = Error;

    /// `r1`..`r4`, `none`, `oracle`, or `custom:EPOCHS:FRACTION:COST`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "r1" => return Ok(Self::R1),
            "r2" => return Ok(Self::R2),
            "r3" => return Ok(Self::R3),
            "r4" => return Ok(Self::R4),
            "none" => return Ok(Self::NONE),
            "oracle" => return Ok(Self::ORACLE),
            _ => {}
        }
        let bad = || Error::UnknownSurrogate(s.to_string());
        let rest = lower.strip_prefix("custom:").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(':').collect();
        let [e, d, c] = parts.as_slice() else {
            return Err(bad());
        };
        Self::custom(
            e.parse().map_err(|_| bad())?,
            d.parse().map_err(|_| bad())?,
            c.parse().map_err(|_| bad())?,
        )
    }
}

/// Fraction of a full evaluation charged per estimate.
pub fn surrogate_cost(spec: &SurrogateSpec) -> f64 {
    spec.cost_ratio
}

/// Low-fidelity accuracy of `config`, without early stopping.
///
/// A failed evaluation scores [`EvaluationResult::WORST`].
pub fn estimate(
    spec: &SurrogateSpec,
    config: &Configuration,
    blackbox: &mut dyn Blackbox,
    seed: u64,
) -> f64 {
    estimate_result(spec, config, blackbox, seed).final_val_accuracy
}

pub(crate) fn estimate_result(
    spec: &SurrogateSpec,
    config: &Configuration,
    blackbox: &mut dyn Blackbox,
    seed: u64,
) -> EvaluationResult {
    let r = blackbox.evaluate(
        EvaluationRequest::new(config, seed)
            .epochs(spec.epoch_budget)
            .fraction(spec.data_fraction),
    );
    if let Some(msg) = &r.failure {
        log::warn!("surrogate {spec} failed on {config}: {msg}");
    }
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedCandidate {
    pub candidate: PollCandidate,
    /// `None` when the poll was not ranked.
    pub estimate: Option<f64>,
    pub epochs_used: usize,
    pub wall_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPoll {
    /// Best estimate first.
    pub candidates: Vec<RankedCandidate>,
    pub cost: f64,
}

/// Orders `poll` by descending estimate and charges `|poll| × cost_ratio`.
///
/// Ties keep their poll order. With the `none` surrogate the poll is returned
/// unchanged at no cost.
pub fn rank_candidates(
    poll: &[PollCandidate],
    spec: &SurrogateSpec,
    blackbox: &mut dyn Blackbox,
    seed: u64,
) -> RankedPoll {
    if spec.is_none() {
        return RankedPoll {
            candidates: poll
                .iter()
                .map(|c| RankedCandidate {
                    candidate: c.clone(),
                    estimate: None,
                    epochs_used: 0,
                    wall_cost: 0.0,
                })
                .collect(),
            cost: 0.0,
        };
    }
    let mut candidates: Vec<RankedCandidate> = poll
        .iter()
        .map(|c| {
            let r = estimate_result(spec, &c.config, blackbox, seed);
            RankedCandidate {
                candidate: c.clone(),
                estimate: Some(r.final_val_accuracy),
                epochs_used: r.epochs_used,
                wall_cost: r.wall_cost,
            }
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.estimate
            .partial_cmp(&a.estimate)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    RankedPoll {
        cost: poll.len() as f64 * spec.cost_ratio,
        candidates,
    }
}
