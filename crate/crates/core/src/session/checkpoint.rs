//! Checkpoint container: a SHA-256 line followed by the JSON body it covers.
//!
//! ```text
//! 3f9c...e1\n
//! {"version":1,"config":{...},"scenario_hash":"...","state":{...}}
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Session, SessionConfig, SessionError, SessionState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Body {
    version: u32,
    config: SessionConfig,
    scenario_hash: String,
    state: SessionState,
}

impl Session {
    /// Serialises everything needed to continue this run exactly.
    pub fn checkpoint(&self) -> String {
        let body = Body {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            scenario_hash: self.scenario_hash.clone(),
            state: self.state.clone(),
        };
        let json = serde_json::to_string(&body).expect("session state serializes");
        format!("{}\n{json}", hex::encode(Sha256::digest(json.as_bytes()).as_slice()))
    }

    /// Restores a checkpoint. Any damage is reported as
    /// [`SessionError::CorruptCheckpoint`] and nothing is loaded.
    pub fn resume(text: &str) -> Result<Session, SessionError> {
        let corrupt = |why: &str| SessionError::CorruptCheckpoint(why.to_string());
        let (hash, json) = text.split_once('\n').ok_or_else(|| corrupt("missing integrity line"))?;
        if hex::encode(Sha256::digest(json.as_bytes()).as_slice()) != hash.trim() {
            return Err(corrupt("integrity hash mismatch"));
        }
        let body: Body = serde_json::from_str(json).map_err(|e| SessionError::CorruptCheckpoint(e.to_string()))?;
        if body.version != CHECKPOINT_VERSION {
            return Err(SessionError::CorruptCheckpoint(format!(
                "unsupported checkpoint version {}",
                body.version
            )));
        }
        body.config.validate()?;
        Ok(Session::from_parts(body.config, body.scenario_hash, body.state))
    }
}
