//! The MADS iteration: poll around the incumbent, optionally order the poll
//! with a low-fidelity surrogate, evaluate opportunistically under early
//! stopping, and update the mesh.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::blackbox::{Blackbox, EvaluationRequest, EvaluationResult, DEFAULT_MAX_EPOCHS};
use crate::early_stop::{
    update_baseline, BaselineEnvelope, EarlyStopMonitor, StopMode, StopReason, StoppingParams,
    TrainingHistory,
};
use crate::error::{Error, Result};
use crate::ledger::{LedgerRecord, RecordKind, RecordSink, RunLedger, FAILED};
use crate::mesh::Mesh;
use crate::poll::{generate_poll_with, PollCandidate, PollOrigin, PollSet};
use crate::space::{Configuration, SpaceBounds};
use crate::surrogates::{rank_candidates, RankedCandidate, SurrogateKind, SurrogateSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSettings {
    /// Budget in full blackbox evaluations.
    pub budget: usize,
    pub max_epochs: usize,
    pub stop_mode: StopMode,
    pub surrogate: SurrogateSpec,
    pub seed: u64,
    /// Append categorical neighbors to every poll.
    pub extended_poll: bool,
    /// Charge ranking passes against the budget.
    pub charge_surrogate_cost: bool,
    /// Milestones and margins; any baseline set here is ignored.
    pub envelope: BaselineEnvelope,
    pub stopping: StoppingParams,
    pub initial_mesh_index: i32,
    pub min_mesh_index: i32,
    pub max_iterations: Option<usize>,
    pub bounds: SpaceBounds,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        Self {
            budget: 200,
            max_epochs: DEFAULT_MAX_EPOCHS,
            stop_mode: StopMode::SchedulerBaseline,
            surrogate: SurrogateSpec::R4,
            seed: 0,
            extended_poll: true,
            charge_surrogate_cost: true,
            envelope: BaselineEnvelope::default(),
            stopping: StoppingParams::default(),
            initial_mesh_index: 0,
            min_mesh_index: -50,
            max_iterations: None,
            bounds: SpaceBounds::default(),
        }
    }
}

impl CampaignSettings {
    pub fn check(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidBudget(0));
        }
        if self.max_epochs == 0 {
            return Err(Error::Settings("max_epochs must be at least 1".into()));
        }
        if self.initial_mesh_index > Mesh::MAX_INDEX
            || self.min_mesh_index > self.initial_mesh_index
        {
            return Err(Error::Settings(format!(
                "mesh indices must satisfy min ({}) <= initial ({}) <= 0",
                self.min_mesh_index, self.initial_mesh_index
            )));
        }
        self.surrogate.check()?;
        self.bounds.check()
    }

    /// Surrogate actually used, with the oracle following `max_epochs`.
    pub fn effective_surrogate(&self) -> SurrogateSpec {
        if self.surrogate.kind == SurrogateKind::Oracle {
            SurrogateSpec::oracle(self.max_epochs)
        } else {
            self.surrogate
        }
    }

    /// Seed of iteration `k`.
    pub fn iteration_seed(&self, k: usize) -> u64 {
        let mut z = self.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationStatus {
    Success,
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationOutcome<T> {
    pub status: IterationStatus,
    /// Full and fractional evaluations charged during the iteration.
    pub evaluations_spent: f64,
    pub new_incumbent: Option<(T, f64)>,
    pub evaluated: usize,
    /// The budget ran out before the poll was exhausted.
    pub interrupted: bool,
}

impl<T> IterationOutcome<T> {
    pub fn failure(evaluations_spent: f64) -> Self {
        Self {
            status: IterationStatus::Failure,
            evaluations_spent,
            new_incumbent: None,
            evaluated: 0,
            interrupted: false,
        }
    }
}

/// What the evaluation callback reports for one candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CandidateResult {
    Score {
        score: f64,
        cost: f64,
    },
    Failed {
        cost: f64,
    },
    /// Not evaluated: no budget left.
    BudgetExhausted,
}

/// Evaluates `poll` in order until a candidate strictly beats
/// `incumbent_score`.
pub fn opportunistic_evaluate<T: Clone, E>(
    poll: &[T],
    incumbent_score: f64,
    mut evaluator: impl FnMut(&T) -> std::result::Result<CandidateResult, E>,
) -> std::result::Result<IterationOutcome<T>, E> {
    let mut out = IterationOutcome::failure(0.0);
    for c in poll {
        match evaluator(c)? {
            CandidateResult::Score { score, cost } => {
                out.evaluated += 1;
                out.evaluations_spent += cost;
                if score > incumbent_score {
                    out.status = IterationStatus::Success;
                    out.new_incumbent = Some((c.clone(), score));
                    return Ok(out);
                }
            }
            CandidateResult::Failed { cost } => {
                out.evaluated += 1;
                out.evaluations_spent += cost;
            }
            CandidateResult::BudgetExhausted => {
                out.interrupted = true;
                return Ok(out);
            }
        }
    }
    Ok(out)
}

pub fn update_mesh<T>(mesh: Mesh, outcome: &IterationOutcome<T>) -> Mesh {
    match outcome.status {
        IterationStatus::Success => mesh.coarsened(),
        IterationStatus::Failure => mesh.refined(),
    }
}

/// Optional search step run before each poll. Candidates it returns are
/// evaluated opportunistically ahead of the poll.
pub trait SearchStep {
    fn propose(
        &mut self,
        incumbent: &Configuration,
        mesh: &Mesh,
        iteration: usize,
    ) -> Vec<Configuration>;
}

/// The default search step: proposes nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoSearch;

impl SearchStep for NoSearch {
    fn propose(&mut self, _: &Configuration, _: &Mesh, _: usize) -> Vec<Configuration> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Budget,
    MeshExhausted,
    IterationLimit,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Budget => "budget",
            Termination::MeshExhausted => "mesh",
            Termination::IterationLimit => "iterations",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignReport {
    pub ledger: RunLedger,
    pub best_config: Configuration,
    pub best_score: f64,
    pub final_mesh: Mesh,
    pub iterations: usize,
    pub termination: Termination,
    /// Records served from a previous run instead of the blackbox.
    pub replayed: usize,
}

impl CampaignReport {
    pub fn total_charged(&self) -> f64 {
        self.ledger.total_cost()
    }

    pub fn total_epochs(&self) -> usize {
        self.ledger.total_epochs()
    }
}

/// Optional collaborators of a campaign.
#[derive(Default)]
pub struct CampaignIo<'a> {
    pub sink: Option<&'a mut dyn RecordSink>,
    /// Earlier ledger whose evaluations are replayed instead of recomputed.
    pub replay: Option<&'a RunLedger>,
    pub search: Option<&'a mut dyn SearchStep>,
}

pub fn run_campaign(
    initial: &Configuration,
    settings: &CampaignSettings,
    blackbox: &mut dyn Blackbox,
) -> Result<CampaignReport> {
    run_campaign_with(initial, settings, blackbox, CampaignIo::default())
}

struct Runner<'a, 'b> {
    settings: &'a CampaignSettings,
    blackbox: &'a mut dyn Blackbox,
    sink: Option<&'b mut dyn RecordSink>,
    replay: VecDeque<(&'a LedgerRecord, Option<&'a TrainingHistory>)>,
    replayed: usize,
    ledger: RunLedger,
    charged: f64,
    iteration: usize,
    mesh: Mesh,
}

impl Runner<'_, '_> {
    fn emit(
        &mut self,
        kind: RecordKind,
        config: String,
        result: Option<&EvaluationResult>,
        charged: f64,
        incumbent: bool,
    ) -> Result<()> {
        self.charged += charged;
        let record = LedgerRecord {
            record_index: self.ledger.len(),
            iteration: self.iteration,
            mesh_index: self.mesh.index,
            kind,
            config,
            score: result.map(|r| r.final_val_accuracy),
            epochs_used: result.map_or(0, |r| r.epochs_used),
            stop_reason: match result {
                None => String::new(),
                Some(r) if r.is_failed() => FAILED.into(),
                Some(r) => r.stop_reason.name().into(),
            },
            charged_cost: charged,
            cumulative_cost: self.charged,
            work_units: result.map_or(0.0, |r| r.wall_cost),
            incumbent,
        };
        let curve = result
            .filter(|_| kind == RecordKind::FullEval)
            .map(|r| r.history.clone());
        if let Some(s) = self.sink.as_deref_mut() {
            s.record(&record, curve.as_ref())?;
        }
        self.ledger.push(record, curve);
        Ok(())
    }

    /// Next replayed result, checked against the request it stands for.
    fn replayed(&mut self, kind: RecordKind, config: &str) -> Result<Option<EvaluationResult>> {
        while let Some((r, _)) = self.replay.front() {
            if r.kind != RecordKind::RankingPass {
                break;
            }
            self.replay.pop_front();
        }
        let Some((r, curve)) = self.replay.pop_front() else {
            return Ok(None);
        };
        if r.kind != kind || r.config != config {
            return Err(Error::Inconsistent(format!(
                "record {} is a {} of `{}`, but the campaign requested a {} of `{}`",
                r.record_index, r.kind, r.config, kind, config
            )));
        }
        self.replayed += 1;
        let result = if r.is_failed() {
            EvaluationResult::failed("failed in the replayed run")
        } else {
            let reason: StopReason = r.stop_reason.parse()?;
            let history = match (kind, curve) {
                (RecordKind::FullEval, Some(h)) => h.clone(),
                (RecordKind::FullEval, None) => {
                    return Err(Error::Inconsistent(format!(
                        "no curve stored for record {}",
                        r.record_index
                    )))
                }
                _ => TrainingHistory::new(),
            };
            EvaluationResult {
                history,
                final_val_accuracy: r.score.unwrap_or(EvaluationResult::WORST),
                epochs_used: r.epochs_used,
                stop_reason: reason,
                wall_cost: r.work_units,
                failure: None,
            }
        };
        Ok(Some(result))
    }

    fn full_eval(
        &mut self,
        config: &Configuration,
        text: &str,
        envelope: &BaselineEnvelope,
    ) -> Result<EvaluationResult> {
        if let Some(r) = self.replayed(RecordKind::FullEval, text)? {
            return Ok(r);
        }
        let mut monitor = EarlyStopMonitor::new(
            self.settings.stop_mode,
            envelope.clone(),
            self.settings.stopping,
        );
        let request = EvaluationRequest::new(config, self.settings.seed)
            .epochs(self.settings.max_epochs)
            .monitor(&mut monitor);
        let r = self.blackbox.evaluate(request);
        if let Some(msg) = &r.failure {
            log::warn!("evaluation of {text} failed: {msg}");
        }
        Ok(r)
    }

    fn rank(
        &mut self,
        poll: &[PollCandidate],
        spec: &SurrogateSpec,
    ) -> Result<Vec<RankedCandidate>> {
        let seed = self.settings.seed;
        let texts: Vec<String> = poll.iter().map(|c| c.config.serialize()).collect();
        let mut served = Vec::with_capacity(poll.len());
        for text in &texts {
            served.push(self.replayed(RecordKind::SurrogateEval, text)?);
        }
        let ranked = if served.iter().all(Option::is_some) {
            let mut v: Vec<RankedCandidate> = poll
                .iter()
                .zip(served)
                .map(|(c, r)| {
                    let r = r.expect("checked above");
                    RankedCandidate {
                        candidate: c.clone(),
                        estimate: Some(r.final_val_accuracy),
                        epochs_used: r.epochs_used,
                        wall_cost: r.wall_cost,
                    }
                })
                .collect();
            v.sort_by(|a, b| {
                b.estimate
                    .partial_cmp(&a.estimate)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            v
        } else {
            // a pass cut short by an interruption is recomputed whole
            rank_candidates(poll, spec, self.blackbox, seed).candidates
        };

        // estimates are logged in poll order, then the pass is charged
        let mut by_poll: Vec<&RankedCandidate> = Vec::with_capacity(ranked.len());
        for c in poll {
            let hit = ranked
                .iter()
                .find(|r| r.candidate.config == c.config)
                .expect("ranking keeps every candidate");
            by_poll.push(hit);
        }
        let rows: Vec<(String, EvaluationResult)> = by_poll
            .iter()
            .zip(texts)
            .map(|(r, text)| {
                let score = r.estimate.unwrap_or(EvaluationResult::WORST);
                (
                    text,
                    EvaluationResult {
                        history: TrainingHistory::new(),
                        final_val_accuracy: score,
                        epochs_used: r.epochs_used,
                        stop_reason: StopReason::None,
                        wall_cost: r.wall_cost,
                        failure: None,
                    },
                )
            })
            .collect();
        for (text, r) in rows {
            self.emit(RecordKind::SurrogateEval, text, Some(&r), 0.0, false)?;
        }
        Ok(ranked)
    }
}

/// Runs a campaign from `initial` until the budget, the mesh, or the
/// iteration limit is exhausted.
///
/// A full evaluation is charged one unit whether or not it was stopped early
/// and starts only if a whole unit remains. A ranking pass starts only if its
/// cost plus one full evaluation fits, so the total charge never exceeds the
/// budget.
pub fn run_campaign_with(
    initial: &Configuration,
    settings: &CampaignSettings,
    blackbox: &mut dyn Blackbox,
    io: CampaignIo<'_>,
) -> Result<CampaignReport> {
    settings.check()?;
    initial
        .validate(&settings.bounds)
        .map_err(Error::InvalidConfiguration)?;
    let budget = settings.budget as f64;
    let spec = settings.effective_surrogate();
    let mut search = io.search;

    let replay = io
        .replay
        .map(|l| {
            l.records
                .iter()
                .map(|r| (r, l.curves.get(&r.record_index)))
                .collect()
        })
        .unwrap_or_default();
    let mut run = Runner {
        settings,
        blackbox,
        sink: io.sink,
        replay,
        replayed: 0,
        ledger: RunLedger::default(),
        charged: 0.0,
        iteration: 0,
        mesh: Mesh::new(settings.initial_mesh_index, settings.min_mesh_index),
    };

    let mut envelope = settings.envelope.clone();
    envelope.baseline = None;
    let initial_text = initial.serialize();
    let first = run.full_eval(initial, &initial_text, &envelope)?;
    let mut incumbent = initial.clone();
    let mut best = first.final_val_accuracy;
    if !first.is_failed() {
        envelope = update_baseline(envelope, &first.history, best, f64::NEG_INFINITY);
    }
    run.emit(RecordKind::FullEval, initial_text, Some(&first), 1.0, true)?;

    let termination = loop {
        if run.mesh.is_exhausted() {
            break Termination::MeshExhausted;
        }
        if settings.max_iterations.is_some_and(|m| run.iteration >= m) {
            break Termination::IterationLimit;
        }
        if run.charged + 1.0 > budget {
            break Termination::Budget;
        }
        run.iteration += 1;
        let seed = settings.iteration_seed(run.iteration);

        let mut order: Vec<PollCandidate> = match search.as_deref_mut() {
            Some(s) => s
                .propose(&incumbent, &run.mesh, run.iteration)
                .into_iter()
                .map(|config| PollCandidate {
                    config,
                    origin: PollOrigin::Search,
                })
                .collect(),
            None => Vec::new(),
        };
        let poll: PollSet = generate_poll_with(
            &incumbent,
            &run.mesh,
            seed,
            &settings.bounds,
            settings.extended_poll,
        );

        let mut pass_cost = 0.0;
        let candidates = if !spec.is_none() && !poll.is_empty() {
            let cost = poll.len() as f64 * spec.cost_ratio;
            let charge = if settings.charge_surrogate_cost {
                cost
            } else {
                0.0
            };
            if run.charged + charge + 1.0 <= budget {
                let ranked = run.rank(&poll.candidates, &spec)?;
                run.emit(RecordKind::RankingPass, String::new(), None, charge, false)?;
                pass_cost = charge;
                ranked.into_iter().map(|r| r.candidate).collect()
            } else {
                poll.candidates
            }
        } else {
            poll.candidates
        };
        order.extend(candidates);

        let mut best_history: Option<TrainingHistory> = None;
        let outcome = opportunistic_evaluate(
            &order,
            best,
            |c: &PollCandidate| -> Result<CandidateResult> {
                if run.charged + 1.0 > budget {
                    return Ok(CandidateResult::BudgetExhausted);
                }
                let text = c.config.serialize();
                let r = run.full_eval(&c.config, &text, &envelope)?;
                let improved = !r.is_failed() && r.final_val_accuracy > best;
                run.emit(RecordKind::FullEval, text, Some(&r), 1.0, improved)?;
                if r.is_failed() {
                    return Ok(CandidateResult::Failed { cost: 1.0 });
                }
                if improved {
                    best_history = Some(r.history.clone());
                } else if envelope.baseline.is_none() {
                    envelope =
                        update_baseline(envelope.clone(), &r.history, r.final_val_accuracy, best);
                }
                Ok(CandidateResult::Score {
                    score: r.final_val_accuracy,
                    cost: 1.0,
                })
            },
        )?;
        let mut outcome = outcome;
        outcome.evaluations_spent += pass_cost;

        if let Some((c, score)) = &outcome.new_incumbent {
            let h = best_history.take().expect("success carries its history");
            envelope = update_baseline(envelope, &h, *score, best);
            incumbent = c.config.clone();
            best = *score;
        }
        if outcome.interrupted && outcome.status == IterationStatus::Failure {
            break Termination::Budget;
        }
        run.mesh = update_mesh(run.mesh, &outcome);
        log::debug!(
            "iteration {} {:?}: {} evaluated, best {best}, mesh {}",
            run.iteration,
            outcome.status,
            outcome.evaluated,
            run.mesh.index
        );
    };

    if run.replayed
        < io.replay
            .map_or(0, |l| l.full_evaluations().count() + surrogate_count(l))
    {
        return Err(Error::Inconsistent(
            "the stored ledger holds evaluations this campaign never requested".into(),
        ));
    }

    Ok(CampaignReport {
        best_config: incumbent,
        best_score: best,
        final_mesh: run.mesh,
        iterations: run.iteration,
        termination,
        replayed: run.replayed,
        ledger: run.ledger,
    })
}

fn surrogate_count(l: &RunLedger) -> usize {
    l.records
        .iter()
        .filter(|r| r.kind == RecordKind::SurrogateEval)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::SimulatedBlackbox;

    #[test]
    fn opportunistic_examples() {
        let run = |scores: &[f64]| {
            let items: Vec<usize> = (0..scores.len()).collect();
            opportunistic_evaluate(&items, 0.5, |i| {
                Ok::<_, ()>(CandidateResult::Score {
                    score: scores[*i],
                    cost: 1.0,
                })
            })
            .unwrap()
        };
        let o = run(&[0.4, 0.6, 0.9]);
        assert_eq!(o.status, IterationStatus::Success);
        assert_eq!(o.evaluated, 2);
        assert_eq!(o.new_incumbent, Some((1, 0.6)));

        let o = run(&[0.1; 6]);
        assert_eq!(o.status, IterationStatus::Failure);
        assert_eq!(o.evaluated, 6);
        assert_eq!(o.evaluations_spent, 6.0);

        assert_eq!(run(&[0.7, 0.1]).evaluated, 1);
        // ties are not improvements
        assert_eq!(run(&[0.5, 0.5]).status, IterationStatus::Failure);
    }

    #[test]
    fn failed_candidate_continues() {
        let items = [0, 1];
        let o = opportunistic_evaluate(&items, 0.5, |i| {
            Ok::<_, ()>(if *i == 0 {
                CandidateResult::Failed { cost: 1.0 }
            } else {
                CandidateResult::Score {
                    score: 0.9,
                    cost: 1.0,
                }
            })
        })
        .unwrap();
        assert_eq!(o.status, IterationStatus::Success);
        assert_eq!(o.evaluated, 2);
    }

    #[test]
    fn mesh_updates() {
        let s = IterationOutcome::<()> {
            status: IterationStatus::Success,
            ..IterationOutcome::failure(1.0)
        };
        let f = IterationOutcome::<()>::failure(1.0);
        assert_eq!(update_mesh(Mesh::new(-3, -50), &s).index, -2);
        assert_eq!(update_mesh(Mesh::new(0, -50), &s).index, 0);
        assert_eq!(update_mesh(Mesh::new(-3, -50), &f).index, -4);
    }

    #[test]
    fn budget_one_is_single_evaluation() {
        let settings = CampaignSettings {
            budget: 1,
            ..CampaignSettings::default()
        };
        let mut bb = SimulatedBlackbox::default();
        let p1 = Configuration::preset_p1();
        let r = run_campaign(&p1, &settings, &mut bb).unwrap();
        assert_eq!(r.ledger.len(), 1);
        assert_eq!(r.best_config, p1);
        assert_eq!(r.termination, Termination::Budget);
        assert_eq!(r.total_charged(), 1.0);
    }

    #[test]
    fn rejects_zero_budget_and_invalid_start() {
        let mut bb = SimulatedBlackbox::default();
        let settings = CampaignSettings {
            budget: 0,
            ..CampaignSettings::default()
        };
        assert!(matches!(
            run_campaign(&Configuration::preset_p1(), &settings, &mut bb),
            Err(Error::InvalidBudget(0))
        ));
        let mut c = Configuration::preset_p1();
        c.training.dropout = 3.0;
        assert!(matches!(
            run_campaign(&c, &CampaignSettings::default(), &mut bb),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn budget_respected() {
        let settings = CampaignSettings {
            budget: 30,
            seed: 3,
            ..CampaignSettings::default()
        };
        let mut bb = SimulatedBlackbox::default();
        let r = run_campaign(&Configuration::preset_p1(), &settings, &mut bb).unwrap();
        assert!(r.total_charged() <= 30.0 + 1e-9);
        assert!(r.ledger.check_costs(1e-9).is_ok());
    }
}
