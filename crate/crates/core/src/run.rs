//! Campaign runs on disk: settings files, ledger persistence, summaries,
//! and resumption of interrupted runs.
//!
//! An output directory holds
//!
//! - `settings.conf`: the resolved settings, `key = value` per line
//! - `ledger.csv`: one row per record, appended and flushed as the run goes
//! - `curves.csv`: per-epoch curves of full evaluations
//! - `summary.txt`: written when the run ends
//!
//! Resuming replays the stored evaluations through a fresh campaign and then
//! continues live, so the finished ledger is the one an uninterrupted run
//! would have written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::blackbox::{
    Blackbox, ExternalBlackbox, ExternalSettings, SimulatedBlackbox, SimulatedTask,
};
use crate::campaign::{run_campaign_with, CampaignIo, CampaignReport, CampaignSettings};
use crate::early_stop::BaselineEnvelope;
use crate::error::{Error, Result};
use crate::ledger::{LedgerFileSink, RunLedger};
use crate::space::Configuration;

pub const SETTINGS_FILE: &str = "settings.conf";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Simulated { noise: f64 },
    External { command: String, timeout_secs: u64 },
}

impl Backend {
    pub fn build(&self) -> Box<dyn Blackbox> {
        match self {
            Backend::Simulated { noise } => Box::new(SimulatedBlackbox::new(SimulatedTask {
                noise: *noise,
                ..SimulatedTask::default()
            })),
            Backend::External {
                command,
                timeout_secs,
            } => Box::new(ExternalBlackbox::new(
                ExternalSettings::new(command.clone()).timeout(Duration::from_secs(*timeout_secs)),
            )),
        }
    }
}

/// Everything needed to start or resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    /// `p1`, `p2`, `p3`, or `custom` when `initial` was given explicitly.
    pub preset: String,
    pub initial: Configuration,
    pub campaign: CampaignSettings,
    pub backend: Backend,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            preset: "p1".into(),
            initial: Configuration::preset_p1(),
            campaign: CampaignSettings::default(),
            backend: Backend::Simulated {
                noise: SimulatedTask::default().noise,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Settings(format!("{key}: cannot parse `{v}`")))
}

impl RunSettings {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let c = &mut self.campaign;
        match key.trim() {
            "preset" => {
                self.initial = Configuration::preset(v)?;
                self.preset = v.to_ascii_lowercase();
            }
            "initial" => {
                self.initial = Configuration::parse(v)?;
                self.preset = "custom".into();
            }
            "budget" => {
                let b: i64 = parse("budget", v)?;
                if b <= 0 {
                    return Err(Error::InvalidBudget(b));
                }
                c.budget = b as usize;
            }
            "max_epochs" => c.max_epochs = parse("max_epochs", v)?,
            "stop" => c.stop_mode = v.parse()?,
            "rank" => c.surrogate = v.parse()?,
            "seed" => c.seed = parse("seed", v)?,
            "extended_poll" => c.extended_poll = parse("extended_poll", v)?,
            "charge_surrogate_cost" => c.charge_surrogate_cost = parse("charge_surrogate_cost", v)?,
            "initial_mesh_index" => c.initial_mesh_index = parse("initial_mesh_index", v)?,
            "min_mesh_index" => c.min_mesh_index = parse("min_mesh_index", v)?,
            "max_iterations" => {
                c.max_iterations = if v == "none" {
                    None
                } else {
                    Some(parse("max_iterations", v)?)
                }
            }
            "envelope" => {
                let mut milestones = Vec::new();
                let mut margins = Vec::new();
                for pair in v.split(',') {
                    let (m, r) = pair.split_once(':').ok_or_else(|| {
                        Error::Settings(format!("envelope: expected epoch:margin, got `{pair}`"))
                    })?;
                    milestones.push(parse("envelope", m.trim())?);
                    margins.push(parse("envelope", r.trim())?);
                }
                c.envelope = BaselineEnvelope::new(milestones, margins)?;
            }
            "patience" => c.stopping.patience = parse("patience", v)?,
            "lr_factor" => c.stopping.factor = parse("lr_factor", v)?,
            "lr_floor" => c.stopping.lr_floor = parse("lr_floor", v)?,
            "backend" => {
                self.backend = match v {
                    "simulated" => match &self.backend {
                        b @ Backend::Simulated { .. } => b.clone(),
                        _ => Backend::Simulated {
                            noise: SimulatedTask::default().noise,
                        },
                    },
                    "external" => match &self.backend {
                        b @ Backend::External { .. } => b.clone(),
                        _ => Backend::External {
                            command: String::new(),
                            timeout_secs: 3600,
                        },
                    },
                    _ => return Err(Error::Settings(format!("backend: unknown `{v}`"))),
                }
            }
            "noise" => {
                let n: f64 = parse("noise", v)?;
                if n.is_nan() || n < 0.0 {
                    return Err(Error::Settings("noise must be non-negative".into()));
                }
                self.backend = Backend::Simulated { noise: n };
            }
            "external_cmd" => {
                let timeout_secs = match self.backend {
                    Backend::External { timeout_secs, .. } => timeout_secs,
                    _ => 3600,
                };
                self.backend = Backend::External {
                    command: v.to_string(),
                    timeout_secs,
                };
            }
            "timeout_secs" => {
                let t: u64 = parse("timeout_secs", v)?;
                if let Backend::External { timeout_secs, .. } = &mut self.backend {
                    *timeout_secs = t;
                }
            }
            other => return Err(Error::Settings(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; lines starting with `#` are comments.
    pub fn apply_conf(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Settings(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_conf(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_conf(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        self.campaign.check()?;
        if let Backend::External { command, .. } = &self.backend {
            if command.trim().is_empty() {
                return Err(Error::Settings(
                    "external backend needs external_cmd".into(),
                ));
            }
        }
        self.initial
            .validate(&self.campaign.bounds)
            .map_err(Error::InvalidConfiguration)
    }

    /// Settings as `key = value` lines, readable by [`RunSettings::from_conf`].
    pub fn to_conf(&self) -> String {
        let c = &self.campaign;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if self.preset == "custom" {
            kv("initial", self.initial.serialize());
        } else {
            kv("preset", self.preset.clone());
        }
        kv("budget", c.budget.to_string());
        kv("max_epochs", c.max_epochs.to_string());
        kv("stop", c.stop_mode.to_string());
        kv("rank", c.surrogate.to_string());
        kv("seed", c.seed.to_string());
        kv("extended_poll", c.extended_poll.to_string());
        kv("charge_surrogate_cost", c.charge_surrogate_cost.to_string());
        kv("initial_mesh_index", c.initial_mesh_index.to_string());
        kv("min_mesh_index", c.min_mesh_index.to_string());
        kv(
            "max_iterations",
            c.max_iterations.map_or("none".into(), |m| m.to_string()),
        );
        let pairs: Vec<String> = c
            .envelope
            .milestones()
            .iter()
            .zip(c.envelope.margins())
            .map(|(m, r)| format!("{m}:{r}"))
            .collect();
        kv("envelope", pairs.join(","));
        kv("patience", c.stopping.patience.to_string());
        kv("lr_factor", c.stopping.factor.to_string());
        kv("lr_floor", c.stopping.lr_floor.to_string());
        match &self.backend {
            Backend::Simulated { noise } => {
                kv("backend", "simulated".into());
                kv("noise", noise.to_string());
            }
            Backend::External {
                command,
                timeout_secs,
            } => {
                kv("backend", "external".into());
                kv("external_cmd", command.clone());
                kv("timeout_secs", timeout_secs.to_string());
            }
        }
        out
    }
}

/// Paths of a run's output directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn settings(&self) -> PathBuf {
        self.root.join(SETTINGS_FILE)
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join(LEDGER_FILE)
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join(CURVES_FILE)
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join(SUMMARY_FILE)
    }

    pub fn load_ledger(&self) -> Result<RunLedger> {
        RunLedger::load(&self.ledger(), Some(&self.curves()))
    }
}

pub fn summary_text(report: &CampaignReport, elapsed: Duration) -> String {
    let mut s = String::new();
    let full = report.ledger.full_evaluations().count();
    let _ = writeln!(s, "best_score = {}", report.best_score);
    let _ = writeln!(s, "best_config = {}", report.best_config);
    let _ = writeln!(s, "total_epochs = {}", report.total_epochs());
    let _ = writeln!(s, "total_charged_bbe = {}", report.total_charged());
    let _ = writeln!(s, "full_evaluations = {full}");
    let _ = writeln!(s, "iterations = {}", report.iterations);
    let _ = writeln!(s, "termination = {}", report.termination.name());
    let _ = writeln!(s, "final_mesh_index = {}", report.final_mesh.index);
    let _ = writeln!(s, "wall_clock_seconds = {:.3}", elapsed.as_secs_f64());
    s
}

fn execute(
    settings: &RunSettings,
    dir: &RunDir,
    prior: Option<&RunLedger>,
) -> Result<CampaignReport> {
    let started = Instant::now();
    let mut sink = match prior {
        Some(p) => LedgerFileSink::resume(&dir.ledger(), &dir.curves(), p)?,
        None => LedgerFileSink::create(&dir.ledger(), &dir.curves())?,
    };
    let mut blackbox = settings.backend.build();
    let report = run_campaign_with(
        &settings.initial,
        &settings.campaign,
        &mut *blackbox,
        CampaignIo {
            sink: Some(&mut sink),
            replay: prior,
            search: None,
        },
    )?;
    fs::write(dir.summary(), summary_text(&report, started.elapsed()))?;
    Ok(report)
}

/// Starts a run in `out`, creating the directory if needed.
pub fn run(settings: &RunSettings, out: &Path) -> Result<CampaignReport> {
    settings.check()?;
    fs::create_dir_all(out)?;
    let dir = RunDir::new(out);
    fs::write(dir.settings(), settings.to_conf())?;
    execute(settings, &dir, None)
}

/// Continues the run stored in `out`.
///
/// `overrides` are `key = value` settings given again at resume time; any
/// that differ from the stored settings are rejected.
pub fn resume(out: &Path, overrides: &[(String, String)]) -> Result<CampaignReport> {
    let dir = RunDir::new(out);
    let text = fs::read_to_string(dir.settings()).map_err(|e| {
        Error::Inconsistent(format!("no stored settings in {}: {e}", out.display()))
    })?;
    let stored = RunSettings::from_conf(&text)?;
    let mut requested = stored.clone();
    for (k, v) in overrides {
        requested.set(k, v)?;
    }
    if requested != stored {
        let before: Vec<&str> = text.lines().collect();
        let after = requested.to_conf();
        let changed: Vec<String> = after
            .lines()
            .filter(|l| !before.contains(l))
            .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim().to_string()))
            .collect();
        return Err(Error::Inconsistent(format!(
            "settings differ from the stored run: {}",
            changed.join(", ")
        )));
    }
    let prior = if dir.ledger().exists() {
        dir.load_ledger()?
    } else {
        RunLedger::default()
    };
    execute(&stored, &dir, Some(&prior))
}
