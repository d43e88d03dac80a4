//! Schema-guided extraction over the target corpus and assembly of the
//! unreliable knowledge graph.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TextUnit};
use crate::explore::{numbered, pair_entities, resolve_pair, Llm};
use crate::llm::parse::{parse_delimited, parse_label_output};
use crate::llm::{LlmError, Unit};
use crate::model::{
    read_json, to_json_text, Entity, FileError, InstanceTriple, KgSchema, TraceRecord, TypeKind,
    TypeTriple,
};

#[derive(Debug, thiserror::Error)]
pub enum ConstructError {
    #[error("{unit} on {source_id}: {source}")]
    Llm {
        unit: &'static str,
        source_id: String,
        #[source]
        source: LlmError,
    },
    #[error("{source_id}: {kind} type {label:?} is not in the schema")]
    UnknownType {
        source_id: String,
        kind: TypeKind,
        label: String,
    },
    #[error("schema has no entity types")]
    EmptySchema,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TypedEntity {
    pub entity: Entity,
    pub entity_type: String,
}

/// Entities keyed by normalized name, plus typed triples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeGraph {
    pub schema_digest: String,
    /// Sorted by normalized name.
    pub entities: Vec<TypedEntity>,
    /// Sorted by (source, head, relation, tail); every triple is typed.
    pub triples: Vec<InstanceTriple>,
}

#[derive(Serialize, Deserialize)]
struct EntityRecord {
    surface: String,
    normalized: String,
    #[serde(rename = "type")]
    entity_type: String,
}

#[derive(Serialize, Deserialize)]
struct TripleRecord {
    head: String,
    relation: String,
    tail: String,
    relation_type: String,
    type_triple: TypeTriple,
    source_id: String,
}

#[derive(Serialize, Deserialize)]
struct KgFile {
    schema_digest: String,
    entities: Vec<EntityRecord>,
    triples: Vec<TripleRecord>,
}

impl KnowledgeGraph {
    pub fn entity(&self, normalized: &str) -> Option<&TypedEntity> {
        self.entities
            .binary_search_by(|e| e.entity.normalized.as_str().cmp(normalized))
            .ok()
            .map(|i| &self.entities[i])
    }

    pub fn to_json(&self) -> String {
        let file = KgFile {
            schema_digest: self.schema_digest.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| EntityRecord {
                    surface: e.entity.surface.clone(),
                    normalized: e.entity.normalized.clone(),
                    entity_type: e.entity_type.clone(),
                })
                .collect(),
            triples: self
                .triples
                .iter()
                .map(|t| {
                    let tt = t.type_triple.clone().expect("KG triples are typed");
                    TripleRecord {
                        head: t.head.surface.clone(),
                        relation: t.relation_phrase.clone(),
                        tail: t.tail.surface.clone(),
                        relation_type: tt.relation_type.clone(),
                        type_triple: tt,
                        source_id: t.source_id.clone(),
                    }
                })
                .collect(),
        };
        to_json_text(&file)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let file: KgFile = read_json(path)?;
        let invalid = |message: String| FileError::Invalid {
            path: path.display().to_string(),
            message,
        };
        let mut entities = Vec::with_capacity(file.entities.len());
        for r in file.entities {
            let entity = Entity::new(&r.surface)
                .ok_or_else(|| invalid("entity with empty surface".into()))?;
            if entity.normalized != r.normalized {
                return Err(invalid(format!(
                    "entity {:?} has wrong normalized form",
                    r.surface
                )));
            }
            entities.push(TypedEntity {
                entity,
                entity_type: r.entity_type,
            });
        }
        entities.sort();
        let mut triples = Vec::with_capacity(file.triples.len());
        for r in file.triples {
            let (Some(head), Some(tail)) = (Entity::new(&r.head), Entity::new(&r.tail)) else {
                return Err(invalid("triple with empty endpoint".into()));
            };
            if r.relation_type != r.type_triple.relation_type {
                return Err(invalid(format!(
                    "relation_type {:?} disagrees with type triple {}",
                    r.relation_type, r.type_triple
                )));
            }
            triples.push(InstanceTriple {
                head,
                relation_phrase: r.relation,
                tail,
                source_id: r.source_id,
                type_triple: Some(r.type_triple),
            });
        }
        let kg = Self {
            schema_digest: file.schema_digest,
            entities,
            triples,
        };
        kg.check().map_err(invalid)?;
        Ok(kg)
    }

    /// Endpoints must be known entities whose types agree with the triple.
    pub fn check(&self) -> Result<(), String> {
        for t in &self.triples {
            let tt = t.type_triple.as_ref().ok_or("untyped triple")?;
            for (end, ty) in [(&t.head, &tt.head_type), (&t.tail, &tt.tail_type)] {
                match self.entity(&end.normalized) {
                    None => {
                        return Err(format!(
                            "triple endpoint {:?} is not an entity",
                            end.surface
                        ))
                    }
                    Some(e) if &e.entity_type != ty => {
                        return Err(format!(
                            "{:?} is {} but the triple says {}",
                            end.surface, e.entity_type, ty
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

/// What one target text contributed.
#[derive(Debug, Clone, Default)]
pub struct TextExtraction {
    pub source_id: String,
    pub entities: Vec<TypedEntity>,
    pub triples: Vec<InstanceTriple>,
    pub trace: Vec<TraceRecord>,
}

fn definitions(types: &[crate::model::FusedType]) -> String {
    types
        .iter()
        .map(|t| format!("{}: {}", t.name, t.definition))
        .collect::<Vec<_>>()
        .join("\n")
}

fn unknown(
    unit: &TextUnit,
    kind: TypeKind,
    label: &str,
    strict: bool,
) -> Result<(), ConstructError> {
    if strict {
        return Err(ConstructError::UnknownType {
            source_id: unit.id.clone(),
            kind,
            label: label.to_string(),
        });
    }
    log::warn!(
        "{}: {kind} type {label:?} is not in the schema; dropped",
        unit.id
    );
    Ok(())
}

fn llm_err(unit: Unit, text: &TextUnit) -> impl FnOnce(LlmError) -> ConstructError + '_ {
    move |source| ConstructError::Llm {
        unit: unit.name(),
        source_id: text.id.clone(),
        source,
    }
}

/// Entities typed with schema entity types. Labels outside the schema
/// drop the entity, or fail when `strict`.
pub fn schema_guided_extract_entities(
    llm: Llm<'_>,
    unit: &TextUnit,
    schema: &KgSchema,
    strict: bool,
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<TypedEntity>, ConstructError> {
    if schema.entity_types.is_empty() {
        return Err(ConstructError::EmptySchema);
    }
    let labels = llm
        .call(
            Unit::SchemaEntityExtraction,
            Some(&unit.id),
            &[
                ("text", unit.content.clone()),
                ("entity_types", definitions(&schema.entity_types)),
            ],
            trace,
            parse_label_output,
        )
        .map_err(llm_err(Unit::SchemaEntityExtraction, unit))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (name, label) in labels {
        let label = label.trim().to_lowercase();
        if schema.entity_type(&label).is_none() {
            unknown(unit, TypeKind::EntityType, &label, strict)?;
            continue;
        }
        let Some(entity) = Entity::new(&name) else {
            continue;
        };
        if seen.insert(entity.normalized.clone()) {
            out.push(TypedEntity {
                entity,
                entity_type: label,
            });
        }
    }
    Ok(out)
}

/// At most one typed triple per entity pair. The type triple is resolved
/// from the endpoint types and the answered relation type, and kept even
/// if the schema does not list it.
pub fn schema_guided_extract_relations(
    llm: Llm<'_>,
    unit: &TextUnit,
    entities: &[TypedEntity],
    schema: &KgSchema,
    strict: bool,
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<InstanceTriple>, ConstructError> {
    let typed = pair_entities(entities);
    if typed.is_empty() {
        return Ok(Vec::new());
    }
    let pairs: Vec<(Entity, Entity)> = typed
        .iter()
        .map(|(a, b)| (a.entity.clone(), b.entity.clone()))
        .collect();
    let types: BTreeMap<&str, &str> = entities
        .iter()
        .map(|e| (e.entity.normalized.as_str(), e.entity_type.as_str()))
        .collect();
    let rendered = numbered(typed.iter().map(|(a, b)| {
        format!(
            "({} [{}], {} [{}])",
            a.entity, a.entity_type, b.entity, b.entity_type
        )
    }));
    let records = llm
        .call(
            Unit::SchemaRelationExtraction,
            Some(&unit.id),
            &[
                ("text", unit.content.clone()),
                ("pairs", rendered),
                ("relation_types", definitions(&schema.relation_types)),
            ],
            trace,
            |raw| parse_delimited(raw, 4),
        )
        .map_err(llm_err(Unit::SchemaRelationExtraction, unit))?;
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        let relation_type = r[3].to_lowercase();
        if schema.relation_type(&relation_type).is_none() {
            unknown(unit, TypeKind::RelationType, &relation_type, strict)?;
            continue;
        }
        let Some((idx, head, tail)) = resolve_pair(&pairs, &r[0], &r[2]) else {
            log::warn!(
                "{}: dropping triple on unknown pair ({}, {})",
                unit.id,
                r[0],
                r[2]
            );
            continue;
        };
        if !used.insert(idx) {
            log::warn!(
                "{}: second triple for pair ({}, {}) ignored",
                unit.id,
                r[0],
                r[2]
            );
            continue;
        }
        out.push(InstanceTriple {
            type_triple: Some(TypeTriple::new(
                types[head.normalized.as_str()],
                &relation_type,
                types[tail.normalized.as_str()],
            )),
            head: head.clone(),
            relation_phrase: r[1].clone(),
            tail: tail.clone(),
            source_id: unit.id.clone(),
        });
    }
    Ok(out)
}

pub fn construct_text(
    llm: Llm<'_>,
    unit: &TextUnit,
    schema: &KgSchema,
    strict: bool,
) -> Result<TextExtraction, ConstructError> {
    let mut trace = Vec::new();
    let entities = schema_guided_extract_entities(llm, unit, schema, strict, &mut trace)?;
    let triples =
        schema_guided_extract_relations(llm, unit, &entities, schema, strict, &mut trace)?;
    Ok(TextExtraction {
        source_id: unit.id.clone(),
        entities,
        triples,
        trace,
    })
}

/// Merges per-text results. Texts are visited in source-id order, so the
/// first type seen for an entity is the one from the smallest source id.
/// Triples contradicting the stored endpoint types are dropped.
pub fn collect(mut results: Vec<TextExtraction>, schema_digest: &str) -> KnowledgeGraph {
    results.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let mut entities: BTreeMap<String, TypedEntity> = BTreeMap::new();
    for r in &results {
        for e in &r.entities {
            match entities.get(&e.entity.normalized) {
                Some(prev) if prev.entity_type != e.entity_type => log::warn!(
                    "{}: {} typed {} here but {} earlier; keeping {}",
                    r.source_id,
                    e.entity.surface,
                    e.entity_type,
                    prev.entity_type,
                    prev.entity_type
                ),
                Some(_) => {}
                None => {
                    entities.insert(e.entity.normalized.clone(), e.clone());
                }
            }
        }
    }
    let mut triples: BTreeMap<(String, String, String, String), InstanceTriple> = BTreeMap::new();
    for t in results.into_iter().flat_map(|r| r.triples) {
        let Some(tt) = &t.type_triple else { continue };
        let stored = |e: &Entity| entities.get(&e.normalized).map(|x| x.entity_type.as_str());
        if stored(&t.head) != Some(tt.head_type.as_str())
            || stored(&t.tail) != Some(tt.tail_type.as_str())
        {
            log::warn!(
                "{}: ({}, {}, {}) typed {} disagrees with entity types; dropped",
                t.source_id,
                t.head,
                t.relation_phrase,
                t.tail,
                tt
            );
            continue;
        }
        let key = (
            t.source_id.clone(),
            t.head.normalized.clone(),
            t.relation_phrase.clone(),
            t.tail.normalized.clone(),
        );
        triples.entry(key).or_insert(t);
    }
    KnowledgeGraph {
        schema_digest: schema_digest.to_string(),
        entities: entities.into_values().collect(),
        triples: triples.into_values().collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Construction {
    pub kg: KnowledgeGraph,
    /// Per-text invocations in corpus order.
    pub trace: Vec<TraceRecord>,
}

/// Per-text extraction on the current rayon pool, then [`collect`].
pub fn construct(
    llm: Llm<'_>,
    corpus: &Corpus,
    schema: &KgSchema,
    strict: bool,
) -> Result<Construction, ConstructError> {
    if schema.entity_types.is_empty() {
        return Err(ConstructError::EmptySchema);
    }
    let results: Vec<TextExtraction> = corpus
        .units()
        .par_iter()
        .map(|u| construct_text(llm, u, schema, strict))
        .collect::<Result<_, _>>()?;
    let trace = results
        .iter()
        .flat_map(|r| r.trace.iter().cloned())
        .collect();
    Ok(Construction {
        kg: collect(results, &schema.digest()),
        trace,
    })
}
