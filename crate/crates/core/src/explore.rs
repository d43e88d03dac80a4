//! Bottom-up schema induction over seed texts.
//!
//! Each seed text is processed independently (entities, pairs, relations,
//! per-text type labels). The distinct low-level labels of all texts are
//! then fused into general types, and every (entity, relation, entity)
//! combination of the fused vocabularies becomes a potential type triple.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde_json::json;

use crate::corpus::{Corpus, TextUnit};
use crate::llm::parse::{
    parse_delimited, parse_label_output, parse_list_output, parse_mapping_output, MappingValue,
};
use crate::llm::{invoke, LlmError, Provider, TemplateSet, Unit, UnitOutput};
use crate::model::{
    dedup_entities, normalize_entity, Entity, FusedType, InstanceTriple, KgSchema, LowDimType,
    TraceRecord, TypeKind, TypeTriple,
};

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("{unit} on {context}: {source}")]
    Llm {
        unit: &'static str,
        context: String,
        #[source]
        source: LlmError,
    },
    #[error("no {0} types to build a schema from")]
    EmptyVocabulary(TypeKind),
    #[error("duplicate {kind} type {name:?}")]
    DuplicateType { kind: TypeKind, name: String },
    #[error("{kind} type fusion left {missing:?} unassigned")]
    CoverageGap {
        kind: TypeKind,
        missing: Vec<String>,
    },
}

/// A provider plus the templates to render for it.
#[derive(Clone, Copy)]
pub struct Llm<'a> {
    pub provider: &'a dyn Provider,
    pub templates: &'a TemplateSet,
}

impl<'a> Llm<'a> {
    pub fn new(provider: &'a dyn Provider, templates: &'a TemplateSet) -> Self {
        Self {
            provider,
            templates,
        }
    }

    /// Invokes `unit` and appends a trace record on success.
    pub(crate) fn call<T: serde::Serialize>(
        &self,
        unit: Unit,
        source_id: Option<&str>,
        bindings: &[(&str, String)],
        trace: &mut Vec<TraceRecord>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let bindings: BTreeMap<String, String> = bindings
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let UnitOutput {
            value, prompt_hash, ..
        } = invoke(self.provider, self.templates, unit, &bindings, parse)?;
        trace.push(TraceRecord {
            unit: unit.name().to_string(),
            source_id: source_id.map(str::to_string),
            input_digest: prompt_hash,
            output: serde_json::to_value(&value).unwrap_or_default(),
        });
        Ok(value)
    }
}

/// All unordered pairs `(items[i], items[j])` with `i < j`, ordered by
/// `(i, j)`.
pub fn pair_entities<T: Clone>(items: &[T]) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(items.len() * items.len().saturating_sub(1) / 2);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            out.push((items[i].clone(), items[j].clone()));
        }
    }
    out
}

pub(crate) fn numbered(lines: impl IntoIterator<Item = String>) -> String {
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Matches a (head, tail) answer against the offered pairs. Returns the
/// offered entities in the answer's direction, or `None` when the answer
/// names something other than an offered pair.
pub(crate) fn resolve_pair<'p>(
    pairs: &'p [(Entity, Entity)],
    head: &str,
    tail: &str,
) -> Option<(usize, &'p Entity, &'p Entity)> {
    let (h, t) = (normalize_entity(head), normalize_entity(tail));
    if h == t {
        return None;
    }
    pairs.iter().enumerate().find_map(|(i, (a, b))| {
        if a.normalized == h && b.normalized == t {
            Some((i, a, b))
        } else if b.normalized == h && a.normalized == t {
            Some((i, b, a))
        } else {
            None
        }
    })
}

fn wrap(unit: Unit, context: &str) -> impl FnOnce(LlmError) -> ExploreError + '_ {
    move |source| ExploreError::Llm {
        unit: unit.name(),
        context: context.to_string(),
        source,
    }
}

pub fn extract_entities(
    llm: Llm<'_>,
    unit: &TextUnit,
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<Entity>, ExploreError> {
    let names = llm
        .call(
            Unit::EntityExtraction,
            Some(&unit.id),
            &[("text", unit.content.clone())],
            trace,
            parse_list_output,
        )
        .map_err(wrap(Unit::EntityExtraction, &unit.id))?;
    Ok(dedup_entities(names.iter().filter_map(|n| Entity::new(n))))
}

/// At most one triple per offered pair; answers naming entities outside
/// the pairs are dropped.
pub fn extract_relations(
    llm: Llm<'_>,
    unit: &TextUnit,
    pairs: &[(Entity, Entity)],
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<InstanceTriple>, ExploreError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let rendered = numbered(pairs.iter().map(|(a, b)| format!("({a}, {b})")));
    let records = llm
        .call(
            Unit::RelationExtraction,
            Some(&unit.id),
            &[("text", unit.content.clone()), ("pairs", rendered)],
            trace,
            |raw| parse_delimited(raw, 3),
        )
        .map_err(wrap(Unit::RelationExtraction, &unit.id))?;
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        let Some((idx, head, tail)) = resolve_pair(pairs, &r[0], &r[2]) else {
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
            head: head.clone(),
            relation_phrase: r[1].clone(),
            tail: tail.clone(),
            source_id: unit.id.clone(),
            type_triple: None,
        });
    }
    Ok(out)
}

/// Labels every entity with exactly one lower-cased low-level type. An
/// answer that skips an entity counts as malformed.
pub fn label_entity_types(
    llm: Llm<'_>,
    unit: &TextUnit,
    entities: &[Entity],
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<(Entity, LowDimType)>, ExploreError> {
    if entities.is_empty() {
        return Ok(Vec::new());
    }
    let listing = entities
        .iter()
        .map(|e| e.surface.clone())
        .collect::<Vec<_>>()
        .join("\n");
    let labels = llm
        .call(
            Unit::EntityTypeLabeling,
            Some(&unit.id),
            &[("text", unit.content.clone()), ("entities", listing)],
            trace,
            |raw| {
                let mut by_name: BTreeMap<String, String> = BTreeMap::new();
                for (name, label) in parse_label_output(raw)? {
                    let label = label.trim().to_lowercase();
                    by_name.entry(normalize_entity(&name)).or_insert(label);
                }
                entities
                    .iter()
                    .map(|e| {
                        by_name
                            .get(&e.normalized)
                            .cloned()
                            .ok_or_else(|| format!("no label for {}", e.surface))
                    })
                    .collect::<Result<Vec<_>, _>>()
            },
        )
        .map_err(wrap(Unit::EntityTypeLabeling, &unit.id))?;
    Ok(entities
        .iter()
        .zip(labels)
        .filter_map(|(e, l)| Some((e.clone(), LowDimType::new(&l, TypeKind::EntityType)?)))
        .collect())
}

/// The low-level relation type of a triple is its lower-cased phrase.
pub fn label_relation_types(triples: &[InstanceTriple]) -> Vec<(InstanceTriple, LowDimType)> {
    triples
        .iter()
        .filter_map(|t| {
            Some((
                t.clone(),
                LowDimType::new(&t.relation_phrase, TypeKind::RelationType)?,
            ))
        })
        .collect()
}

/// Fusion answer before coverage is checked: fused name, definition and
/// proposed members, in answer order.
type RawFusion = Vec<(String, String, Vec<String>)>;

fn parse_fusion(raw: &str) -> Result<RawFusion, String> {
    let mut order: Vec<String> = Vec::new();
    let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut definitions: BTreeMap<String, String> = BTreeMap::new();
    for (key, value) in parse_mapping_output(raw)? {
        let name = key.trim().to_lowercase();
        match value {
            MappingValue::List(items) => {
                if !members.contains_key(&name) {
                    order.push(name.clone());
                }
                members
                    .entry(name)
                    .or_default()
                    .extend(items.into_iter().map(|m| m.trim().to_lowercase()));
            }
            MappingValue::Text(def) => {
                definitions.entry(name).or_insert(def);
            }
        }
    }
    if order.is_empty() {
        return Err("no `name: [members]` lines".into());
    }
    order
        .into_iter()
        .map(|name| {
            let def = definitions
                .get(&name)
                .cloned()
                .ok_or_else(|| format!("no definition for {name:?}"))?;
            let m = members.remove(&name).unwrap_or_default();
            Ok((name, def, m))
        })
        .collect()
}

/// Enforces that members are exactly the input labels, each in one type.
/// Invented members are dropped, repeated members keep their first type,
/// and missing labels become singleton types unless `strict`.
fn enforce_coverage(
    kind: TypeKind,
    input: &BTreeSet<String>,
    proposed: RawFusion,
    strict: bool,
) -> Result<Vec<FusedType>, ExploreError> {
    let mut assigned = BTreeSet::new();
    let mut fused: Vec<FusedType> = Vec::new();
    for (name, definition, members) in proposed {
        let mut kept = Vec::new();
        for m in members {
            if !input.contains(&m) {
                log::warn!("{kind} fusion: {name:?} lists unknown member {m:?}; dropped");
            } else if !assigned.insert(m.clone()) {
                log::warn!("{kind} fusion: {m:?} assigned more than once; first type kept");
            } else {
                kept.push(m);
            }
        }
        if kept.is_empty() {
            log::warn!("{kind} fusion: {name:?} has no valid members; dropped");
            continue;
        }
        fused.push(FusedType {
            name,
            kind,
            definition,
            members: kept,
        });
    }
    let missing: Vec<String> = input.difference(&assigned).cloned().collect();
    if missing.is_empty() {
        return Ok(fused);
    }
    if strict {
        return Err(ExploreError::CoverageGap { kind, missing });
    }
    for m in missing {
        log::warn!("{kind} fusion: {m:?} unassigned; placed in its own type");
        if let Some(existing) = fused.iter_mut().find(|f| f.name == m) {
            existing.members.push(m);
        } else {
            fused.push(FusedType {
                definition: format!("Covers the {kind} type \"{m}\" alone."),
                name: m.clone(),
                kind,
                members: vec![m],
            });
        }
    }
    Ok(fused)
}

/// Groups the distinct low-level labels of one kind into general types.
/// Labels are sent sorted. An empty input yields no types and no call.
pub fn fuse_types(
    llm: Llm<'_>,
    kind: TypeKind,
    low_dim: &BTreeSet<LowDimType>,
    strict: bool,
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<FusedType>, ExploreError> {
    let names: BTreeSet<String> = low_dim
        .iter()
        .filter(|t| t.kind == kind)
        .map(|t| t.name.clone())
        .collect();
    if names.is_empty() {
        return Ok(Vec::new());
    }
    let unit = match kind {
        TypeKind::EntityType => Unit::EntityTypeFusion,
        TypeKind::RelationType => Unit::RelationTypeFusion,
    };
    let listing = names.iter().cloned().collect::<Vec<_>>().join("\n");
    let proposed = llm
        .call(unit, None, &[("types", listing)], trace, parse_fusion)
        .map_err(wrap(unit, "all seed labels"))?;
    enforce_coverage(kind, &names, proposed, strict)
}

/// Every ordered (head, relation, tail) combination, in index order.
pub fn generate_full_schema(
    entity_types: Vec<FusedType>,
    relation_types: Vec<FusedType>,
) -> Result<KgSchema, ExploreError> {
    for (kind, list) in [
        (TypeKind::EntityType, &entity_types),
        (TypeKind::RelationType, &relation_types),
    ] {
        if list.is_empty() {
            return Err(ExploreError::EmptyVocabulary(kind));
        }
        let mut seen = BTreeSet::new();
        for t in list.iter() {
            if !seen.insert(&t.name) {
                return Err(ExploreError::DuplicateType {
                    kind,
                    name: t.name.clone(),
                });
            }
        }
    }
    let mut type_triples =
        Vec::with_capacity(entity_types.len() * entity_types.len() * relation_types.len());
    for h in &entity_types {
        for r in &relation_types {
            for t in &entity_types {
                type_triples.push(TypeTriple::new(&h.name, &r.name, &t.name));
            }
        }
    }
    Ok(KgSchema {
        entity_types,
        relation_types,
        type_triples,
        validated: false,
    })
}

/// Everything learned from one seed text.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub source_id: String,
    pub entities: Vec<Entity>,
    pub triples: Vec<InstanceTriple>,
    pub entity_labels: Vec<(Entity, LowDimType)>,
    pub relation_labels: Vec<LowDimType>,
    pub trace: Vec<TraceRecord>,
}

impl SeedResult {
    /// Compact JSON form for the exploration report.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "source_id": self.source_id,
            "entity_labels": self.entity_labels.iter()
                .map(|(e, l)| json!({"entity": e.surface, "type": l.name}))
                .collect::<Vec<_>>(),
            "triples": self.triples.iter()
                .map(|t| json!([t.head.surface, t.relation_phrase, t.tail.surface]))
                .collect::<Vec<_>>(),
        })
    }
}

pub fn explore_text(llm: Llm<'_>, unit: &TextUnit) -> Result<SeedResult, ExploreError> {
    let mut trace = Vec::new();
    let entities = extract_entities(llm, unit, &mut trace)?;
    let pairs = pair_entities(&entities);
    let triples = extract_relations(llm, unit, &pairs, &mut trace)?;
    let entity_labels = label_entity_types(llm, unit, &entities, &mut trace)?;
    let relation_labels = label_relation_types(&triples)
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    Ok(SeedResult {
        source_id: unit.id.clone(),
        entities,
        triples,
        entity_labels,
        relation_labels,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub schema: KgSchema,
    pub seeds: Vec<SeedResult>,
    /// Fusion invocations; per-text records live in `seeds`.
    pub fusion_trace: Vec<TraceRecord>,
}

impl Exploration {
    /// All unit invocations, per-text ones first in corpus order.
    pub fn trace(&self) -> Vec<TraceRecord> {
        self.seeds
            .iter()
            .flat_map(|s| s.trace.iter().cloned())
            .chain(self.fusion_trace.iter().cloned())
            .collect()
    }
}

/// Runs per-text units in parallel on the current rayon pool, then the
/// two fusion units, then full connection.
pub fn explore(llm: Llm<'_>, seeds: &Corpus, strict: bool) -> Result<Exploration, ExploreError> {
    let results: Vec<SeedResult> = seeds
        .units()
        .par_iter()
        .map(|u| explore_text(llm, u))
        .collect::<Result<_, _>>()?;

    let mut low_dim = BTreeSet::new();
    for r in &results {
        low_dim.extend(r.entity_labels.iter().map(|(_, l)| l.clone()));
        low_dim.extend(r.relation_labels.iter().cloned());
    }
    let mut fusion_trace = Vec::new();
    let entity_types = fuse_types(
        llm,
        TypeKind::EntityType,
        &low_dim,
        strict,
        &mut fusion_trace,
    )?;
    let relation_types = fuse_types(
        llm,
        TypeKind::RelationType,
        &low_dim,
        strict,
        &mut fusion_trace,
    )?;
    let schema = generate_full_schema(entity_types, relation_types)?;
    Ok(Exploration {
        schema,
        seeds: results,
        fusion_trace,
    })
}
