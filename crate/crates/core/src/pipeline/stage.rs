//! Content-addressed stage manifests.
//!
//! After a stage succeeds, `<out>/.stages/<stage>.json` records a digest of
//! everything the stage read and a hash of every file it wrote. A stage is
//! current when its input digest is unchanged and every output still has
//! the recorded hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::model::{read_json, sha256_hex, to_json_text, write_atomic, FileError};

pub const MANIFEST_DIR: &str = ".stages";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub input_digest: String,
    /// Named input digests, for inspection.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory -> SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub completed_at: u64,
}

/// Accumulates named input digests for one stage.
#[derive(Debug, Clone, Default)]
pub struct StageInputs {
    inputs: BTreeMap<String, String>,
}

impl StageInputs {
    pub fn value(mut self, name: &str, value: impl AsRef<str>) -> Self {
        self.inputs
            .insert(name.to_string(), value.as_ref().to_string());
        self
    }

    pub fn bytes(self, name: &str, bytes: &[u8]) -> Self {
        let d = sha256_hex(bytes);
        self.value(name, d)
    }

    pub fn file(self, name: &str, path: &Path) -> Result<Self, FileError> {
        let bytes = fs::read(path).map_err(|e| FileError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(self.bytes(name, &bytes))
    }

    pub fn digest(&self) -> String {
        sha256_hex(to_json_text(&self.inputs).as_bytes())
    }
}

fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

pub fn is_current(out: &Path, stage: &str, inputs: &StageInputs) -> bool {
    let Ok(m) = read_json::<StageManifest>(&manifest_path(out, stage)) else {
        return false;
    };
    m.input_digest == inputs.digest()
        && m.outputs
            .iter()
            .all(|(rel, hash)| file_hash(&out.join(rel)).as_deref() == Some(hash.as_str()))
}

/// Writes the manifest for a stage whose outputs are already on disk.
pub fn record(
    out: &Path,
    stage: &str,
    inputs: &StageInputs,
    outputs: &[&str],
) -> Result<(), FileError> {
    let mut hashes = BTreeMap::new();
    for rel in outputs {
        let path = out.join(rel);
        let hash = file_hash(&path).ok_or_else(|| FileError::Read {
            path: path.display().to_string(),
            message: "output missing after stage".into(),
        })?;
        hashes.insert(rel.to_string(), hash);
    }
    let manifest = StageManifest {
        stage: stage.to_string(),
        input_digest: inputs.digest(),
        inputs: inputs.inputs.clone(),
        outputs: hashes,
        completed_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_atomic(&manifest_path(out, stage), &to_json_text(&manifest))
}
