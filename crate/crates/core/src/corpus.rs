//! Raw text loading and the API-text filter.
//!
//! A text is kept when it is longer than eight whitespace tokens and shows at
//! least one sign of mentioning an API: a `()` call suffix, a dotted name such
//! as `iterator.remove`, or one of the words `method`, `class`, `package`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Texts with this many tokens or fewer are always rejected.
pub const MIN_TOKENS_EXCLUSIVE: usize = 8;

const API_WORDS: [&str; 3] = ["method", "class", "package"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid corpus record: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate text id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: text {id:?} has empty content")]
    EmptyContent {
        path: String,
        line: usize,
        id: String,
    },
}

/// One provenance-tagged text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextUnit {
    pub id: String,
    pub source: String,
    #[serde(rename = "text")]
    pub content: String,
}

impl TextUnit {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        content: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            content: content.into(),
        }
    }
}

/// Ordered collection of texts with pairwise distinct ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    units: Vec<TextUnit>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and empty texts.
    pub fn new(units: Vec<TextUnit>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, unit) in units.iter().enumerate() {
            if !seen.insert(unit.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: unit.id.clone(),
                });
            }
            if unit.content.is_empty() {
                return Err(CorpusError::EmptyContent {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: unit.id.clone(),
                });
            }
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[TextUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn into_units(self) -> Vec<TextUnit> {
        self.units
    }

    /// Parses JSON Lines: one `{"id", "source", "text"}` object per line.
    /// Blank lines are skipped; line numbers in errors are 1-based.
    pub fn from_jsonl(data: &str, path: &str) -> Result<Self, CorpusError> {
        let mut units = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in data.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let unit: TextUnit = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: path.to_string(),
                line: lineno,
                message: e.to_string(),
            })?;
            if !seen.insert(unit.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    path: path.to_string(),
                    line: lineno,
                    id: unit.id,
                });
            }
            if unit.content.is_empty() {
                return Err(CorpusError::EmptyContent {
                    path: path.to_string(),
                    line: lineno,
                    id: unit.id,
                });
            }
            units.push(unit);
        }
        Ok(Self { units })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let data = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&data, &path.display().to_string())
    }

    /// Serializes back to JSON Lines, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for unit in &self.units {
            out.push_str(&serde_json::to_string(unit).expect("text unit serializes"));
            out.push('\n');
        }
        out
    }
}

/// Splits on Unicode whitespace. No returned token is empty.
pub fn tokenize(content: &str) -> Vec<&str> {
    content.split_whitespace().collect()
}

fn has_call_parens(content: &str) -> bool {
    content.contains("()")
}

fn has_dotted_name(content: &str) -> bool {
    let chars: Vec<char> = content.chars().collect();
    chars
        .windows(3)
        .any(|w| w[1] == '.' && w[0].is_alphabetic() && w[2].is_alphabetic())
}

fn has_api_word(content: &str) -> bool {
    content
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .any(|w| API_WORDS.iter().any(|k| w.eq_ignore_ascii_case(k)))
}

/// True when the text is long enough and carries at least one API signal.
pub fn passes_filter(unit: &TextUnit) -> bool {
    let content = unit.content.as_str();
    tokenize(content).len() > MIN_TOKENS_EXCLUSIVE
        && (has_call_parens(content) || has_dotted_name(content) || has_api_word(content))
}

/// Keeps exactly the passing units, in input order.
pub fn filter_corpus(corpus: &Corpus) -> Corpus {
    Corpus {
        units: corpus
            .units
            .iter()
            .filter(|u| passes_filter(u))
            .cloned()
            .collect(),
    }
}
