//! Replay bundles: everything needed to rerun a session and check that it
//! reproduces the recorded report byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{start_session, SessionConfig, SessionError, SessionReport};
use crate::world::{parse_scenario, save_scenario, Scenario};

pub const BUNDLE_FORMAT: &str = "fleet-bundle/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBundle {
    pub format: String,
    pub config: SessionConfig,
    /// Canonical scenario text.
    pub scenario: String,
    /// Manual texts keyed by the path the scenario refers to.
    #[serde(default)]
    pub manuals: BTreeMap<String, String>,
    pub report_sha256: String,
}

/// SHA-256 of the report's canonical JSON.
pub fn report_hash(report: &SessionReport) -> String {
    hex::encode(Sha256::digest(report.to_json().as_bytes()).as_slice())
}

impl ReplayBundle {
    pub fn record(config: &SessionConfig, scenario: &Scenario, report: &SessionReport) -> Self {
        Self {
            format: BUNDLE_FORMAT.to_string(),
            config: config.clone(),
            scenario: save_scenario(scenario),
            manuals: scenario
                .manuals
                .iter()
                .map(|m| (m.path.clone(), m.text.clone()))
                .collect(),
            report_sha256: report_hash(report),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let bundle: Self = serde_json::from_str(text).map_err(|e| SessionError::CorruptCheckpoint(e.to_string()))?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(SessionError::CorruptCheckpoint(format!(
                "unsupported bundle format `{}`",
                bundle.format
            )));
        }
        Ok(bundle)
    }

    /// Reruns the session; the flag tells whether the report hash matches.
    pub fn replay(&self) -> Result<(SessionReport, bool), SessionError> {
        let resolve = |path: &str| {
            self.manuals
                .get(path)
                .cloned()
                .ok_or_else(|| format!("{path}: not in bundle"))
        };
        let scenario = parse_scenario(&self.scenario, &resolve).map_err(|e| SessionError::Config(e.to_string()))?;
        let report = start_session(self.config.clone(), &scenario)?.run_to_completion();
        let same = report_hash(&report) == self.report_sha256;
        Ok((report, same))
    }
}
