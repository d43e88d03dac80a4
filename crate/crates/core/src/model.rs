//! Domain types shared by the pipeline stages.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Canonical comparison form of an API name: trimmed, with one trailing
/// `()` removed. Case is preserved.
pub fn normalize_entity(surface: &str) -> String {
    let t = surface.trim();
    t.strip_suffix("()").unwrap_or(t).trim_end().to_string()
}

/// An API entity as mentioned in a text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub surface: String,
    pub normalized: String,
}

impl Entity {
    /// `None` when the surface form is blank.
    pub fn new(surface: &str) -> Option<Self> {
        let surface = surface.trim();
        if surface.is_empty() || normalize_entity(surface).is_empty() {
            return None;
        }
        Some(Self {
            surface: surface.to_string(),
            normalized: normalize_entity(surface),
        })
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Removes entities whose normalized form was already seen, keeping the
/// first appearance.
pub fn dedup_entities(entities: impl IntoIterator<Item = Entity>) -> Vec<Entity> {
    let mut seen = BTreeSet::new();
    entities
        .into_iter()
        .filter(|e| seen.insert(e.normalized.clone()))
        .collect()
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum TypeKind {
    #[default]
    EntityType,
    RelationType,
}

impl fmt::Display for TypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TypeKind::EntityType => "entity",
            TypeKind::RelationType => "relation",
        })
    }
}

/// A specific label emitted per text before fusion. Always lower-case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LowDimType {
    pub name: String,
    pub kind: TypeKind,
}

impl LowDimType {
    pub fn new(name: &str, kind: TypeKind) -> Option<Self> {
        let name = name.trim().to_lowercase();
        (!name.is_empty()).then_some(Self { name, kind })
    }
}

/// A general type grouping low-dimensional types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedType {
    pub name: String,
    #[serde(skip)]
    pub kind: TypeKind,
    pub definition: String,
    pub members: Vec<String>,
}

/// (head entity type, relation type, tail entity type). Serialized as a
/// three-element array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct TypeTriple {
    pub head_type: String,
    pub relation_type: String,
    pub tail_type: String,
}

impl TypeTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head_type: head.to_string(),
            relation_type: relation.to_string(),
            tail_type: tail.to_string(),
        }
    }

    /// `head|relation|tail`, the key used by annotation files.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}",
            self.head_type, self.relation_type, self.tail_type
        )
    }
}

impl From<[String; 3]> for TypeTriple {
    fn from([head_type, relation_type, tail_type]: [String; 3]) -> Self {
        Self {
            head_type,
            relation_type,
            tail_type,
        }
    }
}

impl From<TypeTriple> for [String; 3] {
    fn from(t: TypeTriple) -> Self {
        [t.head_type, t.relation_type, t.tail_type]
    }
}

impl fmt::Display for TypeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.head_type, self.relation_type, self.tail_type
        )
    }
}

/// A concrete fact extracted from one text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceTriple {
    pub head: Entity,
    pub relation_phrase: String,
    pub tail: Entity,
    pub source_id: String,
    pub type_triple: Option<TypeTriple>,
}

impl InstanceTriple {
    /// `head relation tail`, as used for similarity scoring.
    pub fn serialized(&self) -> String {
        format!(
            "{} {} {}",
            self.head.surface, self.relation_phrase, self.tail.surface
        )
    }
}

/// One AI-unit invocation, as written to trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub unit: String,
    pub source_id: Option<String>,
    /// Hash of the prompt whose answer was accepted.
    pub input_digest: String,
    pub output: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// Pretty JSON with a trailing newline; the on-disk form of every artifact.
pub fn to_json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let data = fs::read_to_string(path).map_err(|e| FileError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&data).map_err(|e| FileError::Invalid {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes via a temporary sibling and rename so readers never see a
/// half-written artifact.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), FileError> {
    let err = |e: std::io::Error| FileError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, contents).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Entity and relation vocabularies plus admissible type triples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgSchema {
    pub entity_types: Vec<FusedType>,
    pub relation_types: Vec<FusedType>,
    pub type_triples: Vec<TypeTriple>,
    pub validated: bool,
}

impl KgSchema {
    pub fn entity_type(&self, name: &str) -> Option<&FusedType> {
        self.entity_types.iter().find(|t| t.name == name)
    }

    pub fn relation_type(&self, name: &str) -> Option<&FusedType> {
        self.relation_types.iter().find(|t| t.name == name)
    }

    pub fn contains(&self, triple: &TypeTriple) -> bool {
        self.type_triples.contains(triple)
    }

    pub fn to_json(&self) -> String {
        to_json_text(self)
    }

    /// SHA-256 of the serialized schema.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let mut schema: KgSchema = read_json(path)?;
        for t in &mut schema.entity_types {
            t.kind = TypeKind::EntityType;
        }
        for t in &mut schema.relation_types {
            t.kind = TypeKind::RelationType;
        }
        schema.check().map_err(|message| FileError::Invalid {
            path: path.display().to_string(),
            message,
        })?;
        Ok(schema)
    }

    /// Every type triple must name types from the vocabularies.
    pub fn check(&self) -> Result<(), String> {
        for t in &self.type_triples {
            if self.entity_type(&t.head_type).is_none()
                || self.entity_type(&t.tail_type).is_none()
                || self.relation_type(&t.relation_type).is_none()
            {
                return Err(format!("type triple {t} uses an unknown type"));
            }
        }
        Ok(())
    }
}
