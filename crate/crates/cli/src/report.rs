//! Machine-readable run reports. A report is fully determined by
//! (config, seed): no timestamps, no environment data, stable field
//! order, so identical runs serialize to identical bytes.

use serde::Serialize;

use orthoqkd_core::analysis::{AttackEvaluation, EnsembleStats, ProbeComparison};
use orthoqkd_core::msglayer::MessageOutcome;
use orthoqkd_core::protocol::{TransmissionRecord, VerificationReport};

use crate::config::ScenarioConfig;

/// Report schema version (documented in the README).
pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Serialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeComparison>,
    /// Attacks skipped because they disturb the encodings (the probe
    /// targets disturbance-free programs).
    pub skipped_disturbing: usize,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub command: &'static str,
    pub config: ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<EnsembleStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Vec<AttackEvaluation>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<MessageOutcome>,
}

impl RunReport {
    pub fn new(command: &'static str, config: ScenarioConfig) -> Self {
        RunReport {
            version: REPORT_VERSION,
            command,
            config,
            stats: None,
            verification: None,
            suite: None,
            probe: None,
            message: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// One JSON object per line, one line per trial.
pub fn records_to_json_lines(records: &[TransmissionRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}
