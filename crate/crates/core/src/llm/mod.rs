//! Language-model access: prompt templates, providers and output parsing.
//!
//! Every AI unit in the pipeline goes through [`invoke`]: the unit's template
//! is rendered with its bindings, sent to a [`Provider`] with fixed
//! deterministic sampling parameters, and the raw text is parsed by the
//! unit's grammar. A malformed answer gets exactly one repair retry.

mod fixture;
mod http;
pub mod parse;
mod script;
pub mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixture::{FixtureEntry, FixtureProvider};
pub use http::{HttpProvider, HttpSettings, API_KEY_ENV};
pub use script::{RecordingProvider, ScriptRule, ScriptedProvider};
pub use template::PromptTemplate;

/// Appended to the prompt for the single repair retry.
pub const REPAIR_INSTRUCTION: &str = "\n@Repair\nYour previous answer did not follow the output format. Answer again using only the output format shown in the examples.\n";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("template {unit}: {message}")]
    InvalidTemplate { unit: String, message: String },
    #[error("no binding for input slot {0:?}")]
    MissingBinding(String),
    #[error("binding for undeclared slot {0:?}")]
    UnknownSlot(String),
    #[error("provider {provider} unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        message: String,
    },
    #[error("no recorded response for unit {unit} with prompt hash {prompt_hash}")]
    FixtureMiss { unit: String, prompt_hash: String },
    #[error("request budget of {limit} provider call(s) exhausted")]
    BudgetExceeded { limit: usize },
    #[error("malformed output from {unit}: {excerpt:?}")]
    MalformedOutput { unit: String, excerpt: String },
    #[error("fixture file {path}: {message}")]
    FixtureFile { path: String, message: String },
}

/// The AI units of the chain. Names double as template file stems and
/// fixture keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    EntityExtraction,
    RelationExtraction,
    EntityTypeLabeling,
    EntityTypeFusion,
    RelationTypeFusion,
    SchemaEntityExtraction,
    SchemaRelationExtraction,
}

impl Unit {
    pub const ALL: [Unit; 7] = [
        Unit::EntityExtraction,
        Unit::RelationExtraction,
        Unit::EntityTypeLabeling,
        Unit::EntityTypeFusion,
        Unit::RelationTypeFusion,
        Unit::SchemaEntityExtraction,
        Unit::SchemaRelationExtraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Unit::EntityExtraction => "entity_extraction",
            Unit::RelationExtraction => "relation_extraction",
            Unit::EntityTypeLabeling => "entity_type_labeling",
            Unit::EntityTypeFusion => "entity_type_fusion",
            Unit::RelationTypeFusion => "relation_type_fusion",
            Unit::SchemaEntityExtraction => "schema_entity_extraction",
            Unit::SchemaRelationExtraction => "schema_relation_extraction",
        }
    }

    pub fn max_tokens(self) -> u32 {
        match self {
            Unit::EntityExtraction => 128,
            Unit::EntityTypeFusion | Unit::RelationTypeFusion => 4096,
            _ => 1024,
        }
    }

    fn default_template(self) -> &'static str {
        match self {
            Unit::EntityExtraction => {
                include_str!("../../fixtures/templates/entity_extraction.prompt")
            }
            Unit::RelationExtraction => {
                include_str!("../../fixtures/templates/relation_extraction.prompt")
            }
            Unit::EntityTypeLabeling => {
                include_str!("../../fixtures/templates/entity_type_labeling.prompt")
            }
            Unit::EntityTypeFusion => {
                include_str!("../../fixtures/templates/entity_type_fusion.prompt")
            }
            Unit::RelationTypeFusion => {
                include_str!("../../fixtures/templates/relation_type_fusion.prompt")
            }
            Unit::SchemaEntityExtraction => {
                include_str!("../../fixtures/templates/schema_entity_extraction.prompt")
            }
            Unit::SchemaRelationExtraction => {
                include_str!("../../fixtures/templates/schema_relation_extraction.prompt")
            }
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One template per AI unit.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<Unit, PromptTemplate>,
    sources: BTreeMap<Unit, String>,
}

impl TemplateSet {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        let mut sources = BTreeMap::new();
        for unit in Unit::ALL {
            let src = unit.default_template();
            let t = PromptTemplate::parse(unit.name(), src).expect("builtin templates are valid");
            templates.insert(unit, t);
            sources.insert(unit, src.to_string());
        }
        Self { templates, sources }
    }

    /// Loads `<unit>.prompt` for every unit from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut templates = BTreeMap::new();
        let mut sources = BTreeMap::new();
        for unit in Unit::ALL {
            let path = dir.join(format!("{}.prompt", unit.name()));
            let src = fs::read_to_string(&path).map_err(|e| LlmError::InvalidTemplate {
                unit: unit.name().to_string(),
                message: format!("{}: {e}", path.display()),
            })?;
            templates.insert(unit, PromptTemplate::parse(unit.name(), &src)?);
            sources.insert(unit, src);
        }
        Ok(Self { templates, sources })
    }

    pub fn get(&self, unit: Unit) -> &PromptTemplate {
        &self.templates[&unit]
    }

    /// Digest over the template sources of the given units.
    pub fn digest(&self, units: &[Unit]) -> String {
        let mut h = Sha256::new();
        for unit in units {
            h.update(unit.name().as_bytes());
            h.update([0]);
            h.update(self.sources[unit].as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// Stable content hash of a rendered prompt (SHA-256, lower-case hex).
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub rendered_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub unit_name: String,
}

impl ProviderRequest {
    /// Request with the deterministic sampling parameters used throughout.
    pub fn for_unit(unit: Unit, rendered_prompt: String) -> Self {
        Self {
            rendered_prompt,
            temperature: 0.0,
            max_tokens: unit.max_tokens(),
            n: 1,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            unit_name: unit.name().to_string(),
        }
    }

    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.rendered_prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    pub raw_text: String,
    pub provider_id: String,
    pub usage: Option<Usage>,
}

/// A completion backend. Implementations must tolerate concurrent callers.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError>;
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Counts calls and enforces an optional cap.
pub struct Budgeted<P> {
    inner: P,
    limit: Option<usize>,
    calls: AtomicUsize,
}

impl<P: Provider> Budgeted<P> {
    pub fn new(inner: P, limit: Option<usize>) -> Self {
        Self {
            inner,
            limit,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of calls forwarded to the inner provider.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: Provider> Provider for Budgeted<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
        let reserved = self
            .calls
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| match self.limit {
                Some(limit) if n >= limit => None,
                _ => Some(n + 1),
            });
        if reserved.is_err() {
            return Err(LlmError::BudgetExceeded {
                limit: self.limit.unwrap_or(0),
            });
        }
        self.inner.complete(request)
    }
}

/// Result of one AI-unit invocation.
#[derive(Debug, Clone)]
pub struct UnitOutput<T> {
    pub value: T,
    /// Hash of the prompt whose answer was accepted.
    pub prompt_hash: String,
    pub raw: String,
}

fn excerpt(raw: &str) -> String {
    const MAX: usize = 160;
    match raw.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &raw[..i]),
        None => raw.to_string(),
    }
}

/// Renders, calls and parses one AI unit, with one repair retry when the
/// answer does not parse.
pub fn invoke<T>(
    provider: &dyn Provider,
    templates: &TemplateSet,
    unit: Unit,
    bindings: &BTreeMap<String, String>,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<UnitOutput<T>, LlmError> {
    let prompt = templates.get(unit).render(bindings)?;
    let request = ProviderRequest::for_unit(unit, prompt);
    let response = provider.complete(&request)?;
    match parse(&response.raw_text) {
        Ok(value) => Ok(UnitOutput {
            value,
            prompt_hash: request.prompt_hash(),
            raw: response.raw_text,
        }),
        Err(reason) => {
            log::warn!("{unit}: malformed output ({reason}); retrying with repair instruction");
            let mut repaired = request.clone();
            repaired.rendered_prompt.push_str(REPAIR_INSTRUCTION);
            let second = provider.complete(&repaired)?;
            match parse(&second.raw_text) {
                Ok(value) => Ok(UnitOutput {
                    value,
                    prompt_hash: repaired.prompt_hash(),
                    raw: second.raw_text,
                }),
                Err(_) => Err(LlmError::MalformedOutput {
                    unit: unit.name().to_string(),
                    excerpt: excerpt(&second.raw_text),
                }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Queue {
        answers: Mutex<Vec<String>>,
        seen: Mutex<Vec<ProviderRequest>>,
    }

    impl Queue {
        fn new(answers: &[&str]) -> Self {
            Self {
                answers: Mutex::new(answers.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Provider for Queue {
        fn id(&self) -> &str {
            "queue"
        }
        fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, LlmError> {
            self.seen.lock().unwrap().push(request.clone());
            let raw_text = self.answers.lock().unwrap().pop().expect("answer queued");
            Ok(ProviderResponse {
                raw_text,
                provider_id: "queue".into(),
                usage: None,
            })
        }
    }

    fn text_binding() -> BTreeMap<String, String> {
        BTreeMap::from([("text".to_string(), "Call foo() now".to_string())])
    }

    #[test]
    fn request_parameters_are_fixed_per_unit() {
        let r = ProviderRequest::for_unit(Unit::EntityExtraction, "p".into());
        assert_eq!((r.temperature, r.n, r.max_tokens), (0.0, 1, 128));
        assert_eq!(r.frequency_penalty, 0.0);
        assert_eq!(r.presence_penalty, 0.0);
        assert_eq!(Unit::EntityTypeFusion.max_tokens(), 4096);
        assert_eq!(Unit::RelationTypeFusion.max_tokens(), 4096);
        assert_eq!(Unit::SchemaRelationExtraction.max_tokens(), 1024);
    }

    #[test]
    fn builtin_templates_parse() {
        let set = TemplateSet::builtin();
        for unit in Unit::ALL {
            assert!(!set.get(unit).instruction.examples.is_empty());
        }
    }

    #[test]
    fn repair_retry_recovers_once() {
        let set = TemplateSet::builtin();
        let p = Queue::new(&["Here are the entities:\nfoo()", "foo()"]);
        let out = invoke(&p, &set, Unit::EntityExtraction, &text_binding(), |raw| {
            parse::parse_list_output(raw)
        })
        .unwrap();
        assert_eq!(out.value, vec!["foo()"]);
        let seen = p.seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[1].rendered_prompt.ends_with(REPAIR_INSTRUCTION));
        assert_eq!(out.prompt_hash, seen[1].prompt_hash());
    }

    #[test]
    fn second_malformed_answer_is_surfaced() {
        let set = TemplateSet::builtin();
        let p = Queue::new(&["Entities:", "Still:"]);
        let err = invoke(&p, &set, Unit::EntityExtraction, &text_binding(), |raw| {
            parse::parse_list_output(raw)
        })
        .unwrap_err();
        assert!(
            matches!(err, LlmError::MalformedOutput { unit, .. } if unit == "entity_extraction")
        );
    }

    #[test]
    fn budget_caps_calls() {
        let b = Budgeted::new(Queue::new(&["a", "b", "c"]), Some(2));
        let r = ProviderRequest::for_unit(Unit::EntityExtraction, "p".into());
        assert!(b.complete(&r).is_ok());
        assert!(b.complete(&r).is_ok());
        assert!(matches!(
            b.complete(&r),
            Err(LlmError::BudgetExceeded { limit: 2 })
        ));
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn prompt_hash_is_stable_hex() {
        let h = prompt_hash("abc");
        assert_eq!(
            h,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
