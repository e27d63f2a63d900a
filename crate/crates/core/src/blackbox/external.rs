//! Child-process trainer driven over a line protocol.
//!
//! ```text
//! parent: CONFIG <serialized> EPOCHS <n> FRACTION <f> SEED <s>
//! child:  EPOCH <e> ACC <a> LOSS <l> LR <r>
//! parent: STOP | CONTINUE
//! ...
//! child:  DONE
//! ```
//!
//! The learning rate recorded for epoch 1 is the one the child reports. Later
//! epochs record the rate chosen by the monitor, so scheduler reductions are
//! tracked on the parent side even when the child ignores them.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{Blackbox, EvaluationRequest, EvaluationResult};
use crate::early_stop::{EpochRecord, StopReason, TrainingHistory};

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalSettings {
    /// Shell command, run with `sh -c`.
    pub command: String,
    /// Wall-clock limit for one evaluation.
    pub timeout: Duration,
}

impl ExternalSettings {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout: Duration::from_secs(3600),
        }
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ExternalBlackbox {
    pub settings: ExternalSettings,
}

impl ExternalBlackbox {
    pub fn new(settings: ExternalSettings) -> Self {
        Self { settings }
    }
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    deadline: Instant,
    transcript: Vec<String>,
}

impl Session {
    fn send(&mut self, line: &str) -> Result<(), String> {
        self.transcript.push(format!("> {line}"));
        let stdin = self.stdin.as_mut().ok_or("stdin closed")?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| format!("write to child failed: {e}"))
    }

    /// Next line from the child, `None` on end of output.
    fn recv(&mut self) -> Result<Option<String>, String> {
        let left = self.deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(line) => {
                self.transcript.push(format!("< {line}"));
                Ok(Some(line))
            }
            Err(RecvTimeoutError::Disconnected) => Ok(None),
            Err(RecvTimeoutError::Timeout) => Err("timed out".into()),
        }
    }

    fn fail(mut self, message: String) -> EvaluationResult {
        let _ = self.child.kill();
        let _ = self.child.wait();
        let transcript = self.transcript.join("\n");
        log::warn!("external evaluation failed: {message}\n{transcript}");
        EvaluationResult::failed(format!("{message}; transcript:\n{transcript}"))
    }
}

fn parse_epoch(line: &str) -> Result<EpochRecord, String> {
    let t: Vec<&str> = line.split_whitespace().collect();
    let shape = ["EPOCH", "", "ACC", "", "LOSS", "", "LR", ""];
    if t.len() != shape.len() || shape.iter().zip(&t).any(|(k, v)| !k.is_empty() && k != v) {
        return Err(format!("malformed line `{line}`"));
    }
    let num = |i: usize| {
        t[i].parse::<f64>()
            .map_err(|_| format!("non-numeric {} `{}`", t[i - 1], t[i]))
    };
    Ok(EpochRecord {
        epoch: t[1]
            .parse()
            .map_err(|_| format!("non-numeric EPOCH `{}`", t[1]))?,
        val_accuracy: num(3)?,
        val_loss: num(5)?,
        learning_rate: num(7)?,
    })
}

impl Blackbox for ExternalBlackbox {
    fn evaluate(&mut self, request: EvaluationRequest<'_>) -> EvaluationResult {
        if let Err(e) = request.check() {
            return EvaluationResult::failed(e);
        }
        let spawned = Command::new("sh")
            .arg("-c")
            .arg(&self.settings.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn();
        let mut child = match spawned {
            Ok(c) => c,
            Err(e) => {
                return EvaluationResult::failed(format!(
                    "cannot launch `{}`: {e}",
                    self.settings.command
                ))
            }
        };
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut s = Session {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            deadline: Instant::now() + self.settings.timeout,
            transcript: Vec::new(),
        };

        let header = format!(
            "CONFIG {} EPOCHS {} FRACTION {} SEED {}",
            request.config.serialize(),
            request.max_epochs,
            request.data_fraction,
            request.seed
        );
        if let Err(e) = s.send(&header) {
            return s.fail(e);
        }

        let mut monitor = request.monitor;
        let mut history = TrainingHistory::new();
        let mut next_lr: Option<f64> = None;
        let mut reason = StopReason::None;
        let mut stopped = false;
        loop {
            let line = match s.recv() {
                Ok(Some(l)) => l,
                Ok(None) => return s.fail("child exited without DONE".into()),
                Err(e) => return s.fail(e),
            };
            let line = line.trim();
            if line == "DONE" {
                break;
            }
            if line.is_empty() {
                continue;
            }
            if stopped {
                return s.fail(format!("unexpected line after STOP: `{line}`"));
            }
            let mut rec = match parse_epoch(line) {
                Ok(r) => r,
                Err(e) => return s.fail(e),
            };
            if let Some(lr) = next_lr {
                rec.learning_rate = lr;
            }
            if let Err(e) = history.push(rec) {
                return s.fail(e.to_string());
            }
            let mut directive = "CONTINUE";
            if let Some(m) = monitor.as_deref_mut() {
                let d = m.observe(&history);
                next_lr = Some(d.next_lr);
                if d.verdict.should_stop() {
                    reason = d.verdict.reason;
                    directive = "STOP";
                    stopped = true;
                }
            }
            if history.len() >= request.max_epochs {
                stopped = true;
            }
            if let Err(e) = s.send(directive) {
                return s.fail(e);
            }
        }
        drop(s.stdin.take());
        match s.child.wait() {
            Ok(status) if status.success() => {}
            Ok(status) => return s.fail(format!("child exited with {status}")),
            Err(e) => return s.fail(format!("wait failed: {e}")),
        }
        if history.is_empty() {
            return s.fail("child reported no epochs".into());
        }
        EvaluationResult::completed(history, reason, request.data_fraction)
    }
}
