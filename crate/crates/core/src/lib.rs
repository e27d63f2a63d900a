//! Mixed-variable mesh adaptive direct search for neural-network
//! hyperparameters, with two cost-saving devices: per-epoch early stopping of
//! unpromising trainings, and ordering of each poll by a cheap low-fidelity
//! estimate so the opportunistic poll tends to stop after one evaluation.
//!
//! ```
//! use mads_hpo::{run_campaign, CampaignSettings, Configuration, SimulatedBlackbox};
//!
//! let settings = CampaignSettings { budget: 5, seed: 1, ..Default::default() };
//! let mut blackbox = SimulatedBlackbox::default();
//! let report = run_campaign(&Configuration::preset_p1(), &settings, &mut blackbox).unwrap();
//! assert!(report.total_charged() <= 5.0);
//! ```

pub mod blackbox;
pub mod campaign;
pub mod early_stop;
pub mod error;
pub mod ledger;
pub mod mesh;
pub mod poll;
pub mod run;
pub mod space;
pub mod surrogates;

pub use blackbox::{
    Blackbox, EpochMonitor, EvaluationRequest, EvaluationResult, ExternalBlackbox,
    ExternalSettings, MonitorDecision, SimulatedBlackbox, SimulatedTask,
};
pub use campaign::{
    run_campaign, run_campaign_with, CampaignIo, CampaignReport, CampaignSettings, Termination,
};
pub use early_stop::{
    BaselineEnvelope, StopMode, StopReason, StopVerdict, StoppingParams, TrainingHistory,
};
pub use error::{Error, Result};
pub use ledger::{export_convergence, LedgerRecord, RecordKind, RunLedger};
pub use mesh::Mesh;
pub use space::{Configuration, Optimizer, SpaceBounds};
pub use surrogates::{SurrogateKind, SurrogateSpec};
