//! Generation-boundary checkpoints.
//!
//! A checkpoint is the engine's full state (population with objectives,
//! ranks, crowding, and responses; RNG; id counter) plus enough run context
//! to refuse resuming under a changed configuration. Serialization is
//! deterministic: serialize → deserialize → serialize is byte-identical,
//! so checkpoint files can be compared and content-addressed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::PromptGenome;
use crate::moea::EngineState;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Short run identifier (prefix of the config digest).
    pub run_id: String,
    /// SHA-256 of the canonical config; resume verifies it.
    pub config_sha256: String,
    /// Which question this engine state belongs to.
    pub question_index: usize,
    /// True once the question's final artifacts are written.
    pub complete: bool,
    pub state: EngineState<PromptGenome>,
}

impl Checkpoint {
    /// The exact bytes `write` puts on disk.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes atomically (temp file + rename) so an interrupt mid-write
    /// never leaves a truncated checkpoint behind.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| {
            Error::Checkpoint(format!("unreadable checkpoint {}: {e}", path.display()))
        })
    }
}
