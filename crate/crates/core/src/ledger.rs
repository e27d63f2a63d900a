//! Run ledger: one record per evaluation or ranking pass, persisted as CSV
//! together with a sidecar holding per-epoch curves of full evaluations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::early_stop::{EpochRecord, TrainingHistory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    #[serde(rename = "full-eval")]
    FullEval,
    #[serde(rename = "surrogate-eval")]
    SurrogateEval,
    #[serde(rename = "ranking-pass")]
    RankingPass,
}

impl RecordKind {
    pub fn name(self) -> &'static str {
        match self {
            RecordKind::FullEval => "full-eval",
            RecordKind::SurrogateEval => "surrogate-eval",
            RecordKind::RankingPass => "ranking-pass",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-eval" => Ok(RecordKind::FullEval),
            "surrogate-eval" => Ok(RecordKind::SurrogateEval),
            "ranking-pass" => Ok(RecordKind::RankingPass),
            _ => Err(Error::Ledger(format!("unknown record kind `{s}`"))),
        }
    }
}

/// Marker written in `stop_reason` for evaluations that failed.
pub const FAILED: &str = "failed";

/// One ledger line. Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub record_index: usize,
    /// 0 for the initial point.
    pub iteration: usize,
    pub mesh_index: i32,
    pub kind: RecordKind,
    /// Serialized configuration; empty for ranking passes.
    pub config: String,
    /// Best validation accuracy; empty for ranking passes.
    pub score: Option<f64>,
    pub epochs_used: usize,
    /// Stop reason name, `failed`, or empty for ranking passes.
    pub stop_reason: String,
    pub charged_cost: f64,
    pub cumulative_cost: f64,
    /// Epochs weighted by data fraction.
    pub work_units: f64,
    /// Set on full evaluations that became the incumbent.
    pub incumbent: bool,
}

impl LedgerRecord {
    pub fn is_failed(&self) -> bool {
        self.stop_reason == FAILED
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLedger {
    pub records: Vec<LedgerRecord>,
    /// Curves of full evaluations, keyed by record index.
    pub curves: BTreeMap<usize, TrainingHistory>,
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    record_index: usize,
    epoch: usize,
    val_accuracy: f64,
    val_loss: f64,
    learning_rate: f64,
}

/// Drops a trailing line that was cut off mid-write.
fn complete_lines(text: &str) -> &str {
    match text.rfind('\n') {
        Some(i) if !text.ends_with('\n') => &text[..=i],
        Some(_) => text,
        None => "",
    }
}

impl RunLedger {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: LedgerRecord, curve: Option<TrainingHistory>) {
        if let Some(c) = curve {
            self.curves.insert(record.record_index, c);
        }
        self.records.push(record);
    }

    pub fn full_evaluations(&self) -> impl Iterator<Item = &LedgerRecord> {
        self.records
            .iter()
            .filter(|r| r.kind == RecordKind::FullEval)
    }

    pub fn total_cost(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_cost)
    }

    pub fn total_epochs(&self) -> usize {
        self.full_evaluations().map(|r| r.epochs_used).sum()
    }

    /// Best full-evaluation record, earliest on ties.
    pub fn best(&self) -> Option<&LedgerRecord> {
        self.full_evaluations().filter(|r| r.score.is_some()).fold(
            None,
            |best: Option<&LedgerRecord>, r| match best {
                Some(b) if b.score >= r.score => Some(b),
                _ => Some(r),
            },
        )
    }

    pub fn header() -> &'static str {
        "record_index,iteration,mesh_index,kind,config,score,epochs_used,stop_reason,charged_cost,cumulative_cost,work_units,incumbent"
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record([
            "record_index",
            "epoch",
            "val_accuracy",
            "val_loss",
            "learning_rate",
        ])?;
        for (idx, h) in &self.curves {
            write_curve(&mut w, *idx, h)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut ledger = RunLedger::default();
        let mut rdr = csv::Reader::from_reader(complete_lines(text).as_bytes());
        for row in rdr.deserialize() {
            let r: LedgerRecord = row?;
            if r.record_index != ledger.records.len() {
                return Err(Error::Ledger(format!(
                    "record {} out of sequence (expected {})",
                    r.record_index,
                    ledger.records.len()
                )));
            }
            ledger.records.push(r);
        }
        Ok(ledger)
    }

    pub fn attach_curves_str(&mut self, text: &str) -> Result<()> {
        let mut rdr = csv::Reader::from_reader(complete_lines(text).as_bytes());
        let n = self.records.len();
        for row in rdr.deserialize() {
            let c: CurveRow = row?;
            if c.record_index >= n {
                continue;
            }
            self.curves
                .entry(c.record_index)
                .or_default()
                .push(EpochRecord {
                    epoch: c.epoch,
                    val_accuracy: c.val_accuracy,
                    val_loss: c.val_loss,
                    learning_rate: c.learning_rate,
                })
                .map_err(|e| Error::Ledger(format!("curve of record {}: {e}", c.record_index)))?;
        }
        Ok(())
    }

    /// Reads a ledger file and, when present, its curve sidecar. A trailing
    /// partial line left by an interrupted write is ignored.
    pub fn load(ledger: &Path, curves: Option<&Path>) -> Result<Self> {
        let mut l = Self::from_csv_str(&std::fs::read_to_string(ledger)?)?;
        if let Some(c) = curves.filter(|c| c.exists()) {
            l.attach_curves_str(&std::fs::read_to_string(c)?)?;
        }
        Ok(l)
    }

    pub fn save(&self, ledger: &Path, curves: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(ledger)?);
        if self.records.is_empty() {
            writeln!(f, "{}", Self::header())?;
        }
        self.write_csv(&mut f)?;
        f.flush()?;
        let mut c = BufWriter::new(File::create(curves)?);
        self.write_curves_csv(&mut c)?;
        c.flush()?;
        Ok(())
    }

    /// Checks that `cumulative_cost` is the running sum of `charged_cost`.
    pub fn check_costs(&self, tol: f64) -> Result<()> {
        let mut sum = 0.0;
        for r in &self.records {
            sum += r.charged_cost;
            if (sum - r.cumulative_cost).abs() > tol {
                return Err(Error::Ledger(format!(
                    "record {}: cumulative cost {} differs from running sum {sum}",
                    r.record_index, r.cumulative_cost
                )));
            }
        }
        Ok(())
    }
}

fn write_curve<W: Write>(
    w: &mut csv::Writer<W>,
    record_index: usize,
    h: &TrainingHistory,
) -> Result<()> {
    for e in h.records() {
        w.serialize(CurveRow {
            record_index,
            epoch: e.epoch,
            val_accuracy: e.val_accuracy,
            val_loss: e.val_loss,
            learning_rate: e.learning_rate,
        })?;
    }
    Ok(())
}

/// Receives records as they are produced.
pub trait RecordSink {
    fn record(&mut self, record: &LedgerRecord, curve: Option<&TrainingHistory>) -> Result<()>;
}

/// Appends records to `ledger.csv` and `curves.csv`, flushing after each one.
pub struct LedgerFileSink {
    ledger: csv::Writer<File>,
    curves: csv::Writer<File>,
    /// Records already on disk; re-emitted records are checked, not written.
    existing: Vec<LedgerRecord>,
}

impl LedgerFileSink {
    /// Starts fresh files.
    pub fn create(ledger: &Path, curves: &Path) -> Result<Self> {
        RunLedger::default().save(ledger, curves)?;
        Self::append(ledger, curves, Vec::new())
    }

    /// Rewrites the files with `prior` (dropping any partial tail) and
    /// appends after it.
    pub fn resume(ledger: &Path, curves: &Path, prior: &RunLedger) -> Result<Self> {
        prior.save(ledger, curves)?;
        Self::append(ledger, curves, prior.records.clone())
    }

    fn append(ledger: &Path, curves: &Path, existing: Vec<LedgerRecord>) -> Result<Self> {
        let open = |p: &Path| OpenOptions::new().append(true).open(p);
        let builder = || {
            let mut b = csv::WriterBuilder::new();
            b.has_headers(false);
            b
        };
        Ok(Self {
            ledger: builder().from_writer(open(ledger)?),
            curves: builder().from_writer(open(curves)?),
            existing,
        })
    }
}

impl RecordSink for LedgerFileSink {
    fn record(&mut self, record: &LedgerRecord, curve: Option<&TrainingHistory>) -> Result<()> {
        if let Some(old) = self.existing.get(record.record_index) {
            if old != record {
                return Err(Error::Inconsistent(format!(
                    "record {} differs from the stored ledger",
                    record.record_index
                )));
            }
            return Ok(());
        }
        // the ledger row is written last so a record is only committed once
        // its curve is on disk
        if let Some(h) = curve {
            write_curve(&mut self.curves, record.record_index, h)?;
            self.curves.flush()?;
        }
        self.ledger.serialize(record)?;
        self.ledger.flush()?;
        Ok(())
    }
}

impl RecordSink for RunLedger {
    fn record(&mut self, record: &LedgerRecord, curve: Option<&TrainingHistory>) -> Result<()> {
        self.push(record.clone(), curve.cloned());
        Ok(())
    }
}

/// One row per full evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub cumulative_bbe: f64,
    pub cumulative_epochs: usize,
    pub cumulative_cost: f64,
    pub best_accuracy: f64,
}

/// Best-so-far accuracy against charged budget, epochs, and abstract cost.
///
/// The budget axis includes ranking passes, so it advances by fractional
/// amounts when a surrogate is used. Epochs count full evaluations only;
/// abstract cost adds every evaluation's work units.
pub fn export_convergence(ledger: &RunLedger) -> Result<Vec<ConvergencePoint>> {
    if ledger.full_evaluations().next().is_none() {
        return Err(Error::EmptyLedger);
    }
    let mut out = Vec::new();
    let mut epochs = 0;
    let mut work = 0.0;
    let mut best = f64::NEG_INFINITY;
    for r in &ledger.records {
        work += r.work_units;
        if r.kind != RecordKind::FullEval {
            continue;
        }
        epochs += r.epochs_used;
        best = best.max(r.score.unwrap_or(0.0));
        out.push(ConvergencePoint {
            cumulative_bbe: r.cumulative_cost,
            cumulative_epochs: epochs,
            cumulative_cost: work,
            best_accuracy: best,
        });
    }
    Ok(out)
}

pub fn write_convergence<W: Write>(points: &[ConvergencePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, kind: RecordKind, score: Option<f64>, charged: f64, cum: f64) -> LedgerRecord {
        LedgerRecord {
            record_index: i,
            iteration: i,
            mesh_index: 0,
            kind,
            config: if kind == RecordKind::RankingPass {
                String::new()
            } else {
                "n_conv=0".into()
            },
            score,
            epochs_used: 10,
            stop_reason: "none".into(),
            charged_cost: charged,
            cumulative_cost: cum,
            work_units: 10.0,
            incumbent: false,
        }
    }

    fn three() -> RunLedger {
        let mut l = RunLedger::default();
        for (i, s) in [0.5, 0.4, 0.6].into_iter().enumerate() {
            l.push(
                rec(i, RecordKind::FullEval, Some(s), 1.0, (i + 1) as f64),
                None,
            );
        }
        l
    }

    #[test]
    fn csv_round_trip() {
        let mut l = three();
        l.push(rec(3, RecordKind::RankingPass, None, 0.6, 3.6), None);
        let text = l.to_csv_string();
        assert!(text.starts_with(RunLedger::header()));
        assert!(text.contains("3,3,0,ranking-pass,,,10,none,0.6,3.6,10.0,false"));
        assert_eq!(RunLedger::from_csv_str(&text).unwrap(), l);
    }

    #[test]
    fn partial_tail_ignored() {
        let text = three().to_csv_string();
        let cut = format!("{text}3,3,0,full-ev");
        assert_eq!(RunLedger::from_csv_str(&cut).unwrap().len(), 3);
    }

    #[test]
    fn running_max_series() {
        let s = export_convergence(&three()).unwrap();
        let best: Vec<f64> = s.iter().map(|p| p.best_accuracy).collect();
        assert_eq!(best, vec![0.5, 0.5, 0.6]);
        assert_eq!(s[2].cumulative_epochs, 30);
    }

    #[test]
    fn single_eval_series() {
        let mut l = RunLedger::default();
        l.push(rec(0, RecordKind::FullEval, Some(0.7), 1.0, 1.0), None);
        assert_eq!(export_convergence(&l).unwrap().len(), 1);
    }

    #[test]
    fn fractional_budget_axis() {
        let mut l = RunLedger::default();
        l.push(rec(0, RecordKind::FullEval, Some(0.5), 1.0, 1.0), None);
        l.push(rec(1, RecordKind::SurrogateEval, Some(0.4), 0.0, 1.0), None);
        l.push(rec(2, RecordKind::RankingPass, None, 0.1, 1.1), None);
        l.push(rec(3, RecordKind::FullEval, Some(0.6), 1.0, 2.1), None);
        let s = export_convergence(&l).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[1].cumulative_bbe - 2.1).abs() < 1e-12);
        assert!(l.check_costs(1e-9).is_ok());
    }

    #[test]
    fn empty_ledger_rejected() {
        assert!(matches!(
            export_convergence(&RunLedger::default()),
            Err(Error::EmptyLedger)
        ));
    }

    #[test]
    fn cost_mismatch_detected() {
        let mut l = three();
        l.records[2].cumulative_cost = 2.5;
        assert!(l.check_costs(1e-9).is_err());
    }
}
