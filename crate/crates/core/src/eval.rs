//! Scoring extracted triples against gold annotations.
//!
//! An extracted triple matches a gold triple from the same text when both
//! endpoints agree after normalization and the embeddings of the two
//! serialized triples have cosine similarity above the threshold. Each
//! text is matched greedily, highest similarity first, one-to-one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::construct::KnowledgeGraph;
use crate::llm::API_KEY_ENV;
use crate::model::{Entity, InstanceTriple, TypeTriple};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.9, 0.92, 0.94];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("embedding provider {provider} unavailable: {message}")]
    ProviderUnavailable { provider: String, message: String },
    #[error("no annotation for type triple {0}")]
    MissingAnnotation(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("similarity threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

/// A vector produced by an [`Embedder`]. Sparse vectors map bucket to
/// weight; both kinds are L2-normalized unless all-zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Sparse(BTreeMap<u32, f64>),
    Dense(Vec<f64>),
}

impl Embedding {
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let (dot, na, nb) = match (self, other) {
            (Embedding::Sparse(a), Embedding::Sparse(b)) => {
                let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
                let dot: f64 = small
                    .iter()
                    .filter_map(|(k, v)| large.get(k).map(|w| v * w))
                    .sum();
                let norm = |m: &BTreeMap<u32, f64>| m.values().map(|v| v * v).sum::<f64>();
                (dot, norm(a), norm(b))
            }
            (Embedding::Dense(a), Embedding::Dense(b)) if a.len() == b.len() => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
                (dot, norm(a), norm(b))
            }
            _ => return 0.0,
        };
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Embedding, EvalError>;
}

/// Character-trigram counts of the lower-cased, whitespace-collapsed text
/// padded with one space on each side, hashed into 2^20 buckets.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalEmbedder;

impl LexicalEmbedder {
    pub const BUCKETS: u64 = 1 << 20;

    fn fnv1a(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn trigrams(text: &str) -> Vec<String> {
        let collapsed = text
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let padded: Vec<char> = format!(" {collapsed} ").chars().collect();
        padded.windows(3).map(|w| w.iter().collect()).collect()
    }
}

impl Embedder for LexicalEmbedder {
    fn id(&self) -> &str {
        "lexical-trigram"
    }

    fn embed(&self, text: &str) -> Result<Embedding, EvalError> {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for g in Self::trigrams(text) {
            *counts
                .entry((Self::fnv1a(g.as_bytes()) % Self::BUCKETS) as u32)
                .or_default() += 1.0;
        }
        let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.values_mut().for_each(|v| *v /= norm);
        }
        Ok(Embedding::Sparse(counts))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSettings {
    /// Requests go to `<base_url>/embeddings`.
    pub base_url: String,
    pub model: String,
    pub attempts: u32,
    pub timeout_secs: u64,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-small".into(),
            attempts: 3,
            timeout_secs: 60,
        }
    }
}

/// Remote encoder speaking the common `/embeddings` protocol. Results are
/// cached per text.
pub struct HttpEmbedder {
    settings: EmbedderSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
    cache: Mutex<HashMap<String, Embedding>>,
    id: String,
}

impl HttpEmbedder {
    pub fn new(settings: EmbedderSettings) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(settings, key)
    }

    pub fn with_key(settings: EmbedderSettings, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let id = format!("http:{}", settings.model);
        Self {
            settings,
            api_key,
            agent,
            cache: Mutex::new(HashMap::new()),
            id,
        }
    }

    fn request(&self, text: &str) -> Result<Vec<f64>, (bool, String)> {
        let url = format!(
            "{}/embeddings",
            self.settings.base_url.trim_end_matches('/')
        );
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({"model": self.settings.model, "input": text}))
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}")));
        }
        if status != 200 {
            return Err((false, format!("HTTP {status}: {body}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| (false, e.to_string()))?;
        v["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<_>>>())
            .ok_or_else(|| (false, "response has no data[0].embedding".to_string()))
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Embedding, EvalError> {
        if let Some(e) = self
            .cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(text)
        {
            return Ok(e.clone());
        }
        let attempts = self.settings.attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            match self.request(text) {
                Ok(v) => {
                    let e = Embedding::Dense(v);
                    self.cache
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .insert(text.to_string(), e.clone());
                    return Ok(e);
                }
                Err((retry, msg)) => {
                    last = msg;
                    if !retry {
                        break;
                    }
                    if n < attempts {
                        thread::sleep(Duration::from_millis(250 << n));
                    }
                }
            }
        }
        Err(EvalError::ProviderUnavailable {
            provider: self.id.clone(),
            message: last,
        })
    }
}

/// What gets embedded for each triple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchText {
    /// `head relation tail`.
    #[default]
    Triple,
    RelationOnly,
}

impl MatchText {
    fn of(self, t: &InstanceTriple) -> String {
        match self {
            MatchText::Triple => t.serialized(),
            MatchText::RelationOnly => t.relation_phrase.clone(),
        }
    }
}

fn check_threshold(threshold: f64) -> Result<(), EvalError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::BadThreshold(threshold))
    }
}

fn same_endpoints(a: &InstanceTriple, b: &InstanceTriple) -> bool {
    a.head.normalized == b.head.normalized && a.tail.normalized == b.tail.normalized
}

/// Endpoints must agree; only then is similarity computed.
pub fn match_triple(
    embedder: &dyn Embedder,
    extracted: &InstanceTriple,
    gold: &InstanceTriple,
    threshold: f64,
    text: MatchText,
) -> Result<bool, EvalError> {
    check_threshold(threshold)?;
    if !same_endpoints(extracted, gold) {
        return Ok(false);
    }
    let a = embedder.embed(&text.of(extracted))?;
    let b = embedder.embed(&text.of(gold))?;
    Ok(a.cosine(&b) > threshold)
}

/// Gold triples grouped by text id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldSet {
    pub by_source: BTreeMap<String, Vec<InstanceTriple>>,
}

#[derive(Deserialize)]
struct GoldTriple {
    head: String,
    relation: String,
    tail: String,
}

#[derive(Deserialize)]
struct GoldLine {
    id: String,
    triples: Vec<GoldTriple>,
}

impl GoldSet {
    pub fn from_jsonl(data: &str, path: &str) -> Result<Self, EvalError> {
        let mut by_source: BTreeMap<String, Vec<InstanceTriple>> = BTreeMap::new();
        for (i, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::Parse {
                path: path.to_string(),
                line: i + 1,
                message,
            };
            let g: GoldLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let entry = by_source.entry(g.id.clone()).or_default();
            for t in g.triples {
                let (Some(head), Some(tail)) = (Entity::new(&t.head), Entity::new(&t.tail)) else {
                    return Err(err("gold triple with empty endpoint".into()));
                };
                if t.relation.trim().is_empty() {
                    return Err(err("gold triple with empty relation".into()));
                }
                entry.push(InstanceTriple {
                    head,
                    relation_phrase: t.relation.trim().to_string(),
                    tail,
                    source_id: g.id.clone(),
                    type_triple: None,
                });
            }
        }
        Ok(Self { by_source })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let data = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_jsonl(&data, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.by_source.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized names of all gold endpoints.
    pub fn entities(&self) -> BTreeSet<String> {
        self.by_source
            .values()
            .flatten()
            .flat_map(|t| [t.head.normalized.clone(), t.tail.normalized.clone()])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub source_id: String,
    pub extracted: [String; 3],
    pub gold: [String; 3],
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub threshold: f64,
    pub matched: usize,
    pub extracted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: Vec<MatchedPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedder: String,
    pub match_text: MatchText,
    pub scores: Vec<ThresholdScore>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub type_triple_accuracy: Option<Accuracy>,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn parts(t: &InstanceTriple) -> [String; 3] {
    [
        t.head.surface.clone(),
        t.relation_phrase.clone(),
        t.tail.surface.clone(),
    ]
}

struct Candidate<'a> {
    similarity: f64,
    extracted: &'a InstanceTriple,
    gold: &'a InstanceTriple,
    e: usize,
    g: usize,
}

/// Scores the KG against gold at each threshold. Only texts that have a
/// gold entry take part, so unannotated texts do not count as false
/// positives. Precision is 0 when nothing was extracted.
pub fn score(
    embedder: &dyn Embedder,
    kg: &KnowledgeGraph,
    gold: &GoldSet,
    thresholds: &[f64],
    text: MatchText,
) -> Result<EvalReport, EvalError> {
    for &t in thresholds {
        check_threshold(t)?;
    }
    let mut extracted: BTreeMap<&str, Vec<&InstanceTriple>> = BTreeMap::new();
    for t in &kg.triples {
        if gold.by_source.contains_key(&t.source_id) {
            extracted.entry(t.source_id.as_str()).or_default().push(t);
        }
    }
    let total_extracted: usize = extracted.values().map(Vec::len).sum();
    let total_gold = gold.len();

    // candidate pairs per text, best first, ties by serialized form
    let mut cache: HashMap<String, Embedding> = HashMap::new();
    let mut embed = |s: String| -> Result<Embedding, EvalError> {
        if let Some(e) = cache.get(&s) {
            return Ok(e.clone());
        }
        let e = embedder.embed(&s)?;
        cache.insert(s, e.clone());
        Ok(e)
    };
    let mut per_text: Vec<(&str, Vec<Candidate>)> = Vec::new();
    for (source, gold_triples) in &gold.by_source {
        let mut ext: Vec<&InstanceTriple> =
            extracted.get(source.as_str()).cloned().unwrap_or_default();
        ext.sort_by_key(|t| parts(t));
        let mut cands = Vec::new();
        for (e, x) in ext.iter().enumerate() {
            for (g, y) in gold_triples.iter().enumerate() {
                if !same_endpoints(x, y) {
                    continue;
                }
                let similarity = embed(text.of(x))?.cosine(&embed(text.of(y))?);
                cands.push(Candidate {
                    similarity,
                    extracted: x,
                    gold: y,
                    e,
                    g,
                });
            }
        }
        cands.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| parts(a.extracted).cmp(&parts(b.extracted)))
                .then_with(|| parts(a.gold).cmp(&parts(b.gold)))
                .then_with(|| (a.e, a.g).cmp(&(b.e, b.g)))
        });
        per_text.push((source.as_str(), cands));
    }

    let scores = thresholds
        .iter()
        .map(|&threshold| {
            let mut matches = Vec::new();
            for (source, cands) in &per_text {
                let mut used_e = BTreeSet::new();
                let mut used_g = BTreeSet::new();
                for c in cands.iter().take_while(|c| c.similarity > threshold) {
                    if used_e.contains(&c.e) || used_g.contains(&c.g) {
                        continue;
                    }
                    used_e.insert(c.e);
                    used_g.insert(c.g);
                    matches.push(MatchedPair {
                        source_id: source.to_string(),
                        extracted: parts(c.extracted),
                        gold: parts(c.gold),
                        similarity: c.similarity,
                    });
                }
            }
            let precision = ratio(matches.len(), total_extracted);
            let recall = ratio(matches.len(), total_gold);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ThresholdScore {
                threshold,
                matched: matches.len(),
                extracted: total_extracted,
                gold: total_gold,
                precision,
                recall,
                f1,
                matches,
            }
        })
        .collect();
    Ok(EvalReport {
        embedder: embedder.id().to_string(),
        match_text: text,
        scores,
        type_triple_accuracy: None,
    })
}

/// Share of candidate type triples annotated as correct. Annotation keys
/// are `head|relation|tail`.
pub fn type_triple_accuracy(
    candidates: &[TypeTriple],
    annotations: &BTreeMap<String, bool>,
) -> Result<Accuracy, EvalError> {
    let mut correct = 0;
    for t in candidates {
        match annotations.get(&t.key()) {
            Some(true) => correct += 1,
            Some(false) => {}
            None => return Err(EvalError::MissingAnnotation(t.key())),
        }
    }
    Ok(Accuracy {
        total: candidates.len(),
        correct,
        accuracy: ratio(correct, candidates.len()),
    })
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "embedder: {} ({:?})", self.embedder, self.match_text);
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>10} {:>8} {:>8}",
            "threshold", "matched", "precision", "recall", "f1"
        );
        for r in &self.scores {
            let _ = writeln!(
                s,
                "{:<10.2} {:>9} {:>10.4} {:>8.4} {:>8.4}",
                r.threshold,
                format!("{}/{}/{}", r.matched, r.extracted, r.gold),
                r.precision,
                r.recall,
                r.f1
            );
        }
        if let Some(a) = &self.type_triple_accuracy {
            let _ = writeln!(
                s,
                "type triples: {}/{} correct ({:.2})",
                a.correct, a.total, a.accuracy
            );
        }
        s
    }
}
