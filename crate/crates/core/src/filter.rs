//! Association-rule validation of type triples.
//!
//! A type triple `(h, r, t)` is read as the rule `(h, t) -> r`. With `N`
//! instance triples, `c` of them typed `(h, r, t)`, `p` with endpoint
//! types `(h, t)` and `q` with relation type `r`:
//!
//! * support = c / N
//! * confidence = c / p
//! * lift = c N / (p q)
//!
//! All three are kept as exact ratios; floats appear only in reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::construct::KnowledgeGraph;
use crate::model::{KgSchema, TypeTriple};

pub type Rational = Ratio<u128>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("knowledge graph has no triples")]
    EmptyKg,
    #[error("invalid threshold {0:?}: expected a non-negative decimal number")]
    BadThreshold(String),
}

/// Parses a non-negative decimal such as `0.005`, `1`, `2.5e-3` into an
/// exact ratio.
pub fn parse_decimal(s: &str) -> Result<Rational, FilterError> {
    let bad = || FilterError::BadThreshold(s.to_string());
    let t = s.trim();
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let mantissa = mantissa.strip_prefix('+').unwrap_or(mantissa);
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let numer: u128 = digits.trim_start_matches('0').parse().unwrap_or(0);
    let scale = exp - frac.len() as i32;
    if scale.unsigned_abs() > 30 {
        return Err(bad());
    }
    let pow = 10u128.pow(scale.unsigned_abs());
    Ok(if scale >= 0 {
        Rational::from_integer(numer.checked_mul(pow).ok_or_else(bad)?)
    } else {
        Rational::new(numer, pow)
    })
}

fn to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Minimum values, compared strictly unless `inclusive`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thresholds {
    pub support_min: Rational,
    pub confidence_min: Rational,
    pub lift_min: Rational,
    pub inclusive: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            support_min: Rational::new(5, 1000),
            confidence_min: Rational::new(2, 100),
            lift_min: Rational::from_integer(1),
            inclusive: false,
        }
    }
}

impl Thresholds {
    pub fn parse(
        support: &str,
        confidence: &str,
        lift: &str,
        inclusive: bool,
    ) -> Result<Self, FilterError> {
        Ok(Self {
            support_min: parse_decimal(support)?,
            confidence_min: parse_decimal(confidence)?,
            lift_min: parse_decimal(lift)?,
            inclusive,
        })
    }

    fn above(&self, value: &Rational, min: &Rational) -> bool {
        if self.inclusive {
            value >= min
        } else {
            value > min
        }
    }

    pub fn accepts(&self, m: &AssociationMetrics) -> bool {
        self.above(&m.support(), &self.support_min)
            && self.above(&m.confidence(), &self.confidence_min)
            && self.above(&m.lift(), &self.lift_min)
    }
}

impl fmt::Display for Thresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "support {} {}, confidence {} {}, lift {} {}",
            if self.inclusive { ">=" } else { ">" },
            to_f64(&self.support_min),
            if self.inclusive { ">=" } else { ">" },
            to_f64(&self.confidence_min),
            if self.inclusive { ">=" } else { ">" },
            to_f64(&self.lift_min),
        )
    }
}

/// How instance triples are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Every occurrence, so a fact stated in two texts counts twice.
    #[default]
    Occurrence,
    /// Each (head, relation phrase, tail) fact once, whatever its source.
    Distinct,
}

impl FromStr for CountMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "occurrence" => Ok(Self::Occurrence),
            "distinct" => Ok(Self::Distinct),
            other => Err(format!("unknown count mode {other:?}")),
        }
    }
}

/// Raw counts behind the three metrics of one type triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssociationMetrics {
    pub occurrence_count: u64,
    /// Instances with the same head and tail entity types.
    pub pair_count: u64,
    /// Instances with the same relation type.
    pub relation_count: u64,
    pub total_count: u64,
}

impl AssociationMetrics {
    pub fn support(&self) -> Rational {
        Rational::new(self.occurrence_count.into(), self.total_count.into())
    }

    pub fn confidence(&self) -> Rational {
        Rational::new(self.occurrence_count.into(), self.pair_count.into())
    }

    pub fn lift(&self) -> Rational {
        Rational::new(
            u128::from(self.occurrence_count) * u128::from(self.total_count),
            u128::from(self.pair_count) * u128::from(self.relation_count),
        )
    }
}

fn counted_types(kg: &KnowledgeGraph, mode: CountMode) -> Vec<&TypeTriple> {
    match mode {
        CountMode::Occurrence => kg
            .triples
            .iter()
            .filter_map(|t| t.type_triple.as_ref())
            .collect(),
        CountMode::Distinct => {
            let mut seen = BTreeSet::new();
            kg.triples
                .iter()
                .filter(|t| {
                    seen.insert((
                        t.head.normalized.as_str(),
                        t.relation_phrase.as_str(),
                        t.tail.normalized.as_str(),
                    ))
                })
                .filter_map(|t| t.type_triple.as_ref())
                .collect()
        }
    }
}

/// Metrics for every type triple occurring in `kg`.
pub fn compute_metrics(
    kg: &KnowledgeGraph,
    mode: CountMode,
) -> Result<BTreeMap<TypeTriple, AssociationMetrics>, FilterError> {
    let types = counted_types(kg, mode);
    if types.is_empty() {
        return Err(FilterError::EmptyKg);
    }
    let total = types.len() as u64;
    let mut triple_counts: BTreeMap<&TypeTriple, u64> = BTreeMap::new();
    let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut relation_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for t in &types {
        *triple_counts.entry(t).or_default() += 1;
        *pair_counts.entry((&t.head_type, &t.tail_type)).or_default() += 1;
        *relation_counts.entry(&t.relation_type).or_default() += 1;
    }
    Ok(triple_counts
        .into_iter()
        .map(|(t, c)| {
            let m = AssociationMetrics {
                occurrence_count: c,
                pair_count: pair_counts[&(t.head_type.as_str(), t.tail_type.as_str())],
                relation_count: relation_counts[t.relation_type.as_str()],
                total_count: total,
            };
            (t.clone(), m)
        })
        .collect())
}

/// Keeps the schema's type triples whose metrics pass; triples that never
/// occurred are dropped. Vocabularies are untouched.
pub fn update_schema(
    schema: &KgSchema,
    metrics: &BTreeMap<TypeTriple, AssociationMetrics>,
    thresholds: &Thresholds,
) -> KgSchema {
    KgSchema {
        entity_types: schema.entity_types.clone(),
        relation_types: schema.relation_types.clone(),
        type_triples: schema
            .type_triples
            .iter()
            .filter(|t| metrics.get(*t).is_some_and(|m| thresholds.accepts(m)))
            .cloned()
            .collect(),
        validated: true,
    }
}

/// Drops triples whose type triple the validated schema does not list,
/// then entities no remaining triple mentions.
pub fn update_kg(kg: &KnowledgeGraph, validated: &KgSchema) -> KnowledgeGraph {
    let allowed: BTreeSet<&TypeTriple> = validated.type_triples.iter().collect();
    let triples: Vec<_> = kg
        .triples
        .iter()
        .filter(|t| {
            t.type_triple
                .as_ref()
                .is_some_and(|tt| allowed.contains(tt))
        })
        .cloned()
        .collect();
    let referenced: BTreeSet<&str> = triples
        .iter()
        .flat_map(|t| [t.head.normalized.as_str(), t.tail.normalized.as_str()])
        .collect();
    KnowledgeGraph {
        schema_digest: validated.digest(),
        entities: kg
            .entities
            .iter()
            .filter(|e| referenced.contains(e.entity.normalized.as_str()))
            .cloned()
            .collect(),
        triples,
    }
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub type_triple: TypeTriple,
    pub count: u64,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
    pub kept: bool,
}

/// Rows plus the settings they were judged with, so a threshold change
/// shows up in the report even when no decision flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub support_min: f64,
    pub confidence_min: f64,
    pub lift_min: f64,
    pub inclusive: bool,
    pub count_mode: CountMode,
    pub rows: Vec<MetricsRow>,
}

pub fn metrics_report(
    metrics: &BTreeMap<TypeTriple, AssociationMetrics>,
    validated: &KgSchema,
    thresholds: &Thresholds,
    mode: CountMode,
) -> MetricsReport {
    let rows = metrics
        .iter()
        .map(|(t, m)| MetricsRow {
            type_triple: t.clone(),
            count: m.occurrence_count,
            support: to_f64(&m.support()),
            confidence: to_f64(&m.confidence()),
            lift: to_f64(&m.lift()),
            kept: validated.contains(t),
        })
        .collect();
    MetricsReport {
        support_min: to_f64(&thresholds.support_min),
        confidence_min: to_f64(&thresholds.confidence_min),
        lift_min: to_f64(&thresholds.lift_min),
        inclusive: thresholds.inclusive,
        count_mode: mode,
        rows,
    }
}

/// Output of one filter pass.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub schema: KgSchema,
    pub kg: KnowledgeGraph,
    pub report: MetricsReport,
}

/// Metrics, schema validation and KG pruning in a single pass.
pub fn filter(
    schema: &KgSchema,
    kg: &KnowledgeGraph,
    thresholds: &Thresholds,
    mode: CountMode,
) -> Result<Filtered, FilterError> {
    let metrics = compute_metrics(kg, mode)?;
    let validated = update_schema(schema, &metrics, thresholds);
    let pruned = update_kg(kg, &validated);
    let report = metrics_report(&metrics, &validated, thresholds, mode);
    Ok(Filtered {
        schema: validated,
        kg: pruned,
        report,
    })
}
