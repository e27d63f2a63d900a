use std::time::Duration;

use mads_hpo::blackbox::{EpochMonitor, MonitorDecision};
use mads_hpo::early_stop::{StopReason, StopVerdict, TrainingHistory};
use mads_hpo::{Blackbox, Configuration, EvaluationRequest, ExternalBlackbox, ExternalSettings};

fn toy_trainer() -> String {
    format!(
        "{}/../../scripts/toy_trainer.sh",
        env!("CARGO_MANIFEST_DIR")
    )
}

fn blackbox(command: &str) -> ExternalBlackbox {
    ExternalBlackbox::new(ExternalSettings::new(command).timeout(Duration::from_secs(10)))
}

#[test]
fn three_epoch_script() {
    let script = "read -r h; for e in 1 2 3; do echo \"EPOCH $e ACC 0.$((e + 4)) LOSS 1.0 LR 0.01\"; read -r x; done; echo DONE";
    let c = Configuration::preset_p1();
    let r = blackbox(script).evaluate(EvaluationRequest::new(&c, 0).epochs(3));
    assert!(!r.is_failed(), "{:?}", r.failure);
    assert_eq!(r.epochs_used, 3);
    assert_eq!(r.final_val_accuracy, 0.7);
    let acc: Vec<f64> = r.history.records().iter().map(|e| e.val_accuracy).collect();
    assert_eq!(acc, [0.5, 0.6, 0.7]);
}

#[test]
fn request_line_carries_the_configuration() {
    let script = "read -r h; case \"$h\" in \"CONFIG \"*\" EPOCHS 2 FRACTION 0.5 SEED 7\") ;; *) exit 3;; esac; \
                  echo 'EPOCH 1 ACC 0.4 LOSS 1 LR 0.1'; read -r x; echo DONE";
    let c = Configuration::preset_p1();
    let r = blackbox(script).evaluate(EvaluationRequest::new(&c, 7).epochs(2).fraction(0.5));
    assert!(!r.is_failed(), "{:?}", r.failure);
    assert_eq!(r.wall_cost, 0.5);
}

#[test]
fn non_numeric_accuracy_fails() {
    let script = "read -r h; echo 'EPOCH 1 ACC high LOSS 1 LR 0.1'; read -r x; echo DONE";
    let c = Configuration::preset_p1();
    let r = blackbox(script).evaluate(EvaluationRequest::new(&c, 0).epochs(3));
    assert!(r.is_failed());
    assert_eq!(r.final_val_accuracy, 0.0);
}

#[test]
fn missing_done_fails() {
    let script = "read -r h; echo 'EPOCH 1 ACC 0.5 LOSS 1 LR 0.1'; read -r x";
    let c = Configuration::preset_p1();
    assert!(blackbox(script)
        .evaluate(EvaluationRequest::new(&c, 0).epochs(3))
        .is_failed());
}

#[test]
fn nonzero_exit_fails() {
    let script = "read -r h; echo 'EPOCH 1 ACC 0.5 LOSS 1 LR 0.1'; read -r x; echo DONE; exit 2";
    let c = Configuration::preset_p1();
    assert!(blackbox(script)
        .evaluate(EvaluationRequest::new(&c, 0).epochs(1))
        .is_failed());
}

#[test]
fn timeout_fails() {
    let c = Configuration::preset_p1();
    let mut bb =
        ExternalBlackbox::new(ExternalSettings::new("sleep 5").timeout(Duration::from_millis(200)));
    let started = std::time::Instant::now();
    let r = bb.evaluate(EvaluationRequest::new(&c, 0).epochs(3));
    assert!(r.is_failed());
    assert!(started.elapsed() < Duration::from_secs(4));
}

struct StopAt(usize);

impl EpochMonitor for StopAt {
    fn observe(&mut self, history: &TrainingHistory) -> MonitorDecision {
        let verdict = if history.current_epoch() >= self.0 {
            StopVerdict::stop(StopReason::EnvelopeBreach, "test")
        } else {
            StopVerdict::proceed()
        };
        MonitorDecision {
            verdict,
            next_lr: history.last().unwrap().learning_rate,
        }
    }
}

#[test]
fn monitor_stop_reaches_the_child() {
    let c = Configuration::preset_p1();
    let mut monitor = StopAt(5);
    let r = blackbox(&toy_trainer()).evaluate(
        EvaluationRequest::new(&c, 0)
            .epochs(50)
            .monitor(&mut monitor),
    );
    assert!(!r.is_failed(), "{:?}", r.failure);
    assert_eq!(r.epochs_used, 5);
    assert_eq!(r.stop_reason, StopReason::EnvelopeBreach);
    // 0.9 - 0.8 / 6
    assert!((r.final_val_accuracy - 0.766667).abs() < 1e-6);
}

#[test]
fn toy_trainer_runs_to_the_epoch_limit() {
    let c = Configuration::preset_p1();
    let r = blackbox(&toy_trainer()).evaluate(EvaluationRequest::new(&c, 0).epochs(8));
    assert!(!r.is_failed(), "{:?}", r.failure);
    assert_eq!(r.epochs_used, 8);
    assert_eq!(r.stop_reason, StopReason::None);
}
