//! Fixture authoring: a rule-based responder and a recorder that captures
//! whatever a provider answers as fixture entries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{FixtureEntry, LlmError, Provider, ProviderRequest, ProviderResponse};

/// Answers `response` to any request for `unit` whose rendered prompt
/// contains every string in `contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub unit: String,
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: String,
}

/// First matching rule wins.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    rules: Vec<ScriptRule>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let fail = |message: String| LlmError::FixtureFile {
            path: path.display().to_string(),
            message,
        };
        let data = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let rules = serde_json::from_str(&data).map_err(|e| fail(e.to_string()))?;
        Ok(Self::new(rules))
    }
}

impl Provider for ScriptedProvider {
    fn id(&self) -> &str {
        "script"
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        self.rules
            .iter()
            .find(|r| {
                r.unit == request.unit_name
                    && r.contains
                        .iter()
                        .all(|s| request.rendered_prompt.contains(s))
            })
            .map(|r| ProviderResponse {
                raw_text: r.response.clone(),
                provider_id: "script".into(),
                usage: None,
            })
            .ok_or_else(|| LlmError::FixtureMiss {
                unit: request.unit_name.clone(),
                prompt_hash: request.prompt_hash(),
            })
    }
}

/// Forwards to `inner` and keeps every successful answer.
pub struct RecordingProvider<P> {
    inner: P,
    recorded: Mutex<BTreeMap<(String, String), String>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded entries sorted by (unit, prompt hash).
    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .map(|((unit, prompt_hash), response)| FixtureEntry {
                unit: unit.clone(),
                prompt_hash: prompt_hash.clone(),
                response: response.clone(),
            })
            .collect()
    }

    /// Writes the recorded entries as a fixture file, merged with any
    /// entries already present at `path`.
    pub fn write(&self, path: &Path) -> Result<usize, LlmError> {
        let fail = |message: String| LlmError::FixtureFile {
            path: path.display().to_string(),
            message,
        };
        let mut merged: BTreeMap<(String, String), String> = BTreeMap::new();
        if path.exists() {
            let data = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
            let existing: Vec<FixtureEntry> =
                serde_json::from_str(&data).map_err(|e| fail(e.to_string()))?;
            for e in existing {
                merged.insert((e.unit, e.prompt_hash), e.response);
            }
        }
        for e in self.entries() {
            merged.insert((e.unit, e.prompt_hash), e.response);
        }
        let out: Vec<FixtureEntry> = merged
            .into_iter()
            .map(|((unit, prompt_hash), response)| FixtureEntry {
                unit,
                prompt_hash,
                response,
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&out).map_err(|e| fail(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| fail(e.to_string()))?;
        Ok(out.len())
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        let resp = self.inner.complete(request)?;
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(
                (request.unit_name.clone(), request.prompt_hash()),
                resp.raw_text.clone(),
            );
        Ok(resp)
    }
}
