use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LlmError, Provider, ProviderRequest, ProviderResponse};

/// One recorded answer, keyed by unit name and prompt hash.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub unit: String,
    pub prompt_hash: String,
    pub response: String,
}

/// Replays recorded responses. Immutable once loaded.
#[derive(Debug, Default, Clone)]
pub struct FixtureProvider {
    entries: HashMap<(String, String), String>,
}

impl FixtureProvider {
    pub fn from_entries(entries: Vec<FixtureEntry>) -> Result<Self, LlmError> {
        let mut map = HashMap::new();
        for e in entries {
            let key = (e.unit.clone(), e.prompt_hash.to_ascii_lowercase());
            if let Some(prev) = map.insert(key, e.response.clone()) {
                if prev != e.response {
                    return Err(LlmError::FixtureFile {
                        path: "<entries>".into(),
                        message: format!(
                            "conflicting responses for unit {} hash {}",
                            e.unit, e.prompt_hash
                        ),
                    });
                }
            }
        }
        Ok(Self { entries: map })
    }

    /// Reads a JSON array of `{"unit", "prompt_hash", "response"}`.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let fail = |message: String| LlmError::FixtureFile {
            path: path.display().to_string(),
            message,
        };
        let data = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let entries: Vec<FixtureEntry> =
            serde_json::from_str(&data).map_err(|e| fail(e.to_string()))?;
        Self::from_entries(entries).map_err(|e| match e {
            LlmError::FixtureFile { message, .. } => fail(message),
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Provider for FixtureProvider {
    fn id(&self) -> &str {
        "fixture"
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        let hash = request.prompt_hash();
        match self.entries.get(&(request.unit_name.clone(), hash.clone())) {
            Some(text) => Ok(ProviderResponse {
                raw_text: text.clone(),
                provider_id: "fixture".into(),
                usage: None,
            }),
            None => Err(LlmError::FixtureMiss {
                unit: request.unit_name.clone(),
                prompt_hash: hash,
            }),
        }
    }
}
