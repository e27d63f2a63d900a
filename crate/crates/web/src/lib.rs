//! Browser demo bindings. Every function returns a JSON string; the plain
//! Rust versions are used by the native tests.

use mads_hpo::blackbox::SimulatedBlackbox;
use mads_hpo::early_stop::{EarlyStopMonitor, StoppingParams};
use mads_hpo::poll::generate_poll;
use mads_hpo::surrogates::rank_candidates;
use mads_hpo::{
    export_convergence, run_campaign, BaselineEnvelope, Blackbox, CampaignSettings, Configuration,
    EvaluationRequest, Mesh, SpaceBounds, StopMode, SurrogateSpec,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const EPOCHS: usize = 200;

#[derive(Serialize)]
struct Bound {
    epoch: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct CurveView {
    baseline: Vec<f64>,
    candidate: Vec<f64>,
    /// The same candidate trained without early stopping.
    unstopped: Vec<f64>,
    bounds: Vec<Bound>,
    learning_rates: Vec<f64>,
    stopped_at: usize,
    stop_reason: String,
}

fn accuracies(h: &mads_hpo::TrainingHistory) -> Vec<f64> {
    h.records().iter().map(|r| r.val_accuracy).collect()
}

fn check(c: &Configuration) -> Result<(), String> {
    c.validate(&SpaceBounds::default()).map_err(|v| {
        v.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    })
}

/// Trains `preset` as the baseline, then the same preset with the given
/// learning rate and dropout under `stop`.
pub fn learning_curve(
    preset: &str,
    learning_rate: f64,
    dropout: f64,
    seed: u64,
    stop: &str,
) -> Result<String, String> {
    let base = Configuration::preset(preset).map_err(|e| e.to_string())?;
    let mode: StopMode = stop.parse().map_err(|e: mads_hpo::Error| e.to_string())?;
    let mut candidate = base.clone();
    candidate.training.learning_rate = learning_rate;
    candidate.training.dropout = dropout;
    check(&candidate)?;

    let mut bb = SimulatedBlackbox::default();
    let baseline = bb.evaluate(EvaluationRequest::new(&base, seed).epochs(EPOCHS));
    let envelope = BaselineEnvelope::default().with_baseline(baseline.history.clone());
    let mut monitor = EarlyStopMonitor::new(mode, envelope.clone(), StoppingParams::default());
    let stopped = bb.evaluate(
        EvaluationRequest::new(&candidate, seed)
            .epochs(EPOCHS)
            .monitor(&mut monitor),
    );
    let unstopped = bb.evaluate(EvaluationRequest::new(&candidate, seed).epochs(EPOCHS));

    let view = CurveView {
        baseline: accuracies(&baseline.history),
        candidate: accuracies(&stopped.history),
        unstopped: accuracies(&unstopped.history),
        bounds: envelope
            .milestones()
            .iter()
            .filter_map(|&m| {
                envelope.bound_at(m).map(|b| Bound {
                    epoch: m,
                    accuracy: b,
                })
            })
            .collect(),
        learning_rates: stopped
            .history
            .records()
            .iter()
            .map(|r| r.learning_rate)
            .collect(),
        stopped_at: stopped.epochs_used,
        stop_reason: stopped.stop_reason.name().into(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Point {
    bbe: f64,
    epochs: usize,
    best: f64,
}

#[derive(Serialize)]
struct ConvergenceView {
    ranked: Vec<Point>,
    unranked: Vec<Point>,
    ranked_best: f64,
    unranked_best: f64,
}

fn trace(seed: u64, budget: usize, surrogate: SurrogateSpec) -> Result<(Vec<Point>, f64), String> {
    let settings = CampaignSettings {
        seed,
        budget,
        surrogate,
        ..CampaignSettings::default()
    };
    let r = run_campaign(
        &Configuration::preset_p1(),
        &settings,
        &mut SimulatedBlackbox::default(),
    )
    .map_err(|e| e.to_string())?;
    let points = export_convergence(&r.ledger)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|p| Point {
            bbe: p.cumulative_bbe,
            epochs: p.cumulative_epochs,
            best: p.best_accuracy,
        })
        .collect();
    Ok((points, r.best_score))
}

/// Best-so-far traces of a campaign ranked by `rank` and of an unranked one.
pub fn convergence(seed: u64, budget: usize, rank: &str) -> Result<String, String> {
    if budget == 0 {
        return Err("budget must be positive".into());
    }
    let spec: SurrogateSpec = rank.parse().map_err(|e: mads_hpo::Error| e.to_string())?;
    let (ranked, ranked_best) = trace(seed, budget, spec)?;
    let (unranked, unranked_best) = trace(seed, budget, SurrogateSpec::NONE)?;
    let view = ConvergenceView {
        ranked,
        unranked,
        ranked_best,
        unranked_best,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PollPoint {
    x: Option<f64>,
    y: Option<f64>,
    origin: String,
    config: String,
    estimate: Option<f64>,
    /// Position in the evaluation order, 0 first.
    order: usize,
}

#[derive(Serialize)]
struct PollView {
    incumbent: PollPoint,
    candidates: Vec<PollPoint>,
    x_step: f64,
    y_step: f64,
}

fn slot_value(c: &Configuration, name: &str) -> Option<f64> {
    c.slots()
        .iter()
        .zip(c.values())
        .find(|(s, _)| s.name() == name)
        .map(|(_, v)| v)
}

/// Poll set around `preset` projected on two named slots, in the order
/// `rank` would evaluate it.
pub fn poll_view(
    preset: &str,
    mesh_index: i32,
    seed: u64,
    x_slot: &str,
    y_slot: &str,
    rank: &str,
) -> Result<String, String> {
    let bounds = SpaceBounds::default();
    let mesh = Mesh::new(mesh_index, -50);
    let incumbent = Configuration::preset(preset)
        .map_err(|e| e.to_string())?
        .project_to_mesh(&mesh, &bounds);
    let (Some(x0), Some(y0)) = (
        slot_value(&incumbent, x_slot),
        slot_value(&incumbent, y_slot),
    ) else {
        return Err(format!("unknown slot `{x_slot}` or `{y_slot}`"));
    };
    let spec: SurrogateSpec = rank.parse().map_err(|e: mads_hpo::Error| e.to_string())?;
    let poll = generate_poll(&incumbent, &mesh, seed, &bounds);
    let ranked = rank_candidates(
        &poll.candidates,
        &spec,
        &mut SimulatedBlackbox::default(),
        seed,
    );

    let step = |name: &str| {
        incumbent
            .slots()
            .iter()
            .find(|s| s.name() == name)
            .map_or(0.0, |s| mesh.poll_size(bounds.slot(s.kind)))
    };
    let view = PollView {
        incumbent: PollPoint {
            x: Some(x0),
            y: Some(y0),
            origin: "incumbent".into(),
            config: incumbent.serialize(),
            estimate: None,
            order: 0,
        },
        candidates: ranked
            .candidates
            .iter()
            .enumerate()
            .map(|(i, r)| PollPoint {
                x: slot_value(&r.candidate.config, x_slot),
                y: slot_value(&r.candidate.config, y_slot),
                origin: r.candidate.origin.tag().into(),
                config: r.candidate.config.serialize(),
                estimate: r.estimate,
                order: i,
            })
            .collect(),
        x_step: step(x_slot),
        y_step: step(y_slot),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = learningCurve)]
pub fn learning_curve_js(
    preset: &str,
    learning_rate: f64,
    dropout: f64,
    seed: u32,
    stop: &str,
) -> Result<String, JsValue> {
    learning_curve(preset, learning_rate, dropout, u64::from(seed), stop)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = convergence)]
pub fn convergence_js(seed: u32, budget: u32, rank: &str) -> Result<String, JsValue> {
    convergence(u64::from(seed), budget as usize, rank).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = pollView)]
pub fn poll_view_js(
    preset: &str,
    mesh_index: i32,
    seed: u32,
    x_slot: &str,
    y_slot: &str,
    rank: &str,
) -> Result<String, JsValue> {
    poll_view(preset, mesh_index, u64::from(seed), x_slot, y_slot, rank)
        .map_err(|e| JsValue::from_str(&e))
}
