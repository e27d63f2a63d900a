use mads_hpo_web::{convergence, learning_curve, poll_view};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn curve_stops_a_divergent_learning_rate() {
    let v = parse(learning_curve("p1", 0.9, 0.5, 1, "scheduler+baseline"));
    let stopped = v["stopped_at"].as_u64().unwrap() as usize;
    assert_eq!(v["candidate"].as_array().unwrap().len(), stopped);
    assert!(stopped < 200);
    assert_eq!(v["unstopped"].as_array().unwrap().len(), 200);
    // milestones whose baseline reference is at chance carry no bound
    let bounds = v["bounds"].as_array().unwrap();
    assert!((1..=7).contains(&bounds.len()));
}

#[test]
fn curve_without_stopping_runs_to_the_end() {
    let v = parse(learning_curve("p1", 0.05, 0.25, 1, "none"));
    assert_eq!(v["stopped_at"], 200);
    assert_eq!(v["stop_reason"], "none");
}

#[test]
fn curve_rejects_bad_input() {
    assert!(learning_curve("p9", 0.1, 0.5, 1, "none").is_err());
    assert!(learning_curve("p1", 5.0, 0.5, 1, "none").is_err());
    assert!(learning_curve("p1", 0.1, 0.5, 1, "maybe").is_err());
}

#[test]
fn convergence_traces_are_monotone() {
    let v = parse(convergence(2, 12, "r4"));
    for key in ["ranked", "unranked"] {
        let best: Vec<f64> = v[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["best"].as_f64().unwrap())
            .collect();
        assert!(!best.is_empty());
        assert!(best.windows(2).all(|w| w[1] >= w[0]), "{key}");
    }
    assert!(convergence(2, 0, "r4").is_err());
}

#[test]
fn poll_view_orders_by_estimate() {
    let v = parse(poll_view("p1", -1, 5, "learning_rate", "dropout", "r4"));
    let c = v["candidates"].as_array().unwrap();
    assert!(!c.is_empty());
    let est: Vec<f64> = c.iter().map(|p| p["estimate"].as_f64().unwrap()).collect();
    assert!(est.windows(2).all(|w| w[0] >= w[1]));
    assert!(c.iter().any(|p| p["origin"] == "categorical-neighbor"));
    assert!(poll_view("p1", 0, 5, "nope", "dropout", "r4").is_err());
}

#[test]
fn unranked_poll_has_no_estimates() {
    let v = parse(poll_view("p1", 0, 5, "learning_rate", "dropout", "none"));
    assert!(v["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["estimate"].is_null()));
}
