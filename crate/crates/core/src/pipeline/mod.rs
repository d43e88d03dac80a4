//! Stage orchestration: explore, construct, filter and eval, each reading
//! and writing files in the output directory, skipped when its inputs are
//! unchanged since the last successful run.

pub mod config;
pub mod stage;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use crate::construct::{construct, ConstructError, KnowledgeGraph};
use crate::corpus::{filter_corpus, Corpus, CorpusError};
use crate::eval::{
    score, type_triple_accuracy, Embedder, EvalError, HttpEmbedder, LexicalEmbedder,
};
use crate::explore::{explore, ExploreError, Llm};
use crate::filter::{filter, metrics_report, update_kg, update_schema, Filtered};
use crate::llm::{
    Budgeted, FixtureProvider, HttpProvider, LlmError, Provider, RecordingProvider,
    ScriptedProvider, TemplateSet, Unit,
};
use crate::model::{read_json, to_json_text, write_atomic, FileError, KgSchema, TraceRecord};

pub use config::{EmbedderMode, PipelineConfig, ProviderMode};
use stage::StageInputs;

pub const SCHEMA_POTENTIAL: &str = "schema.potential.json";
pub const KG_UNRELIABLE: &str = "kg.unreliable.json";
pub const SCHEMA_VALIDATED: &str = "schema.validated.json";
pub const KG_RELIABLE: &str = "kg.reliable.json";
pub const METRICS: &str = "metrics.json";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TEXT: &str = "eval.txt";

/// Files every full run writes, in stage order.
pub const ARTIFACTS: [&str; 7] = [
    SCHEMA_POTENTIAL,
    KG_UNRELIABLE,
    SCHEMA_VALIDATED,
    KG_RELIABLE,
    METRICS,
    EVAL_JSON,
    EVAL_TEXT,
];

const EXPLORE_UNITS: [Unit; 5] = [
    Unit::EntityExtraction,
    Unit::RelationExtraction,
    Unit::EntityTypeLabeling,
    Unit::EntityTypeFusion,
    Unit::RelationTypeFusion,
];
const CONSTRUCT_UNITS: [Unit; 2] = [Unit::SchemaEntityExtraction, Unit::SchemaRelationExtraction];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: provider: {source}")]
    Provider {
        stage: &'static str,
        #[source]
        source: LlmError,
    },
    #[error("{stage}: {message}")]
    Data {
        stage: &'static str,
        message: String,
    },
}

impl PipelineError {
    /// 2 for configuration, 3 for provider and 4 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Provider { .. } => 3,
            PipelineError::Data { .. } => 4,
        }
    }

    fn from_llm(stage: &'static str, e: LlmError) -> Self {
        match e {
            LlmError::InvalidTemplate { .. }
            | LlmError::MissingBinding(_)
            | LlmError::UnknownSlot(_)
            | LlmError::FixtureFile { .. } => PipelineError::Config(format!("{stage}: {e}")),
            other => PipelineError::Provider {
                stage,
                source: other,
            },
        }
    }

    fn data(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Data {
            stage,
            message: e.to_string(),
        }
    }
}

fn explore_err(e: ExploreError) -> PipelineError {
    match e {
        ExploreError::Llm { source, .. } => PipelineError::from_llm("explore", source),
        other => PipelineError::data("explore", other),
    }
}

fn construct_err(e: ConstructError) -> PipelineError {
    match e {
        ConstructError::Llm { source, .. } => PipelineError::from_llm("construct", source),
        other => PipelineError::data("construct", other),
    }
}

fn corpus_err(stage: &'static str, e: CorpusError) -> PipelineError {
    match e {
        CorpusError::Io { .. } => PipelineError::Config(format!("{stage}: {e}")),
        other => PipelineError::data(stage, other),
    }
}

fn file_err(stage: &'static str, e: FileError) -> PipelineError {
    match e {
        FileError::Read { .. } => PipelineError::Config(format!("{stage}: {e}")),
        other => PipelineError::data(stage, other),
    }
}

fn eval_err(e: EvalError) -> PipelineError {
    match e {
        EvalError::Io { .. } | EvalError::BadThreshold(_) => {
            PipelineError::Config(format!("eval: {e}"))
        }
        EvalError::ProviderUnavailable { .. } => PipelineError::Provider {
            stage: "eval",
            source: LlmError::ProviderUnavailable {
                provider: "embedder".into(),
                attempts: 0,
                message: e.to_string(),
            },
        },
        other => PipelineError::data("eval", other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Inputs and outputs unchanged since the recorded run.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: &'static str,
    pub status: StageStatus,
    pub outputs: Vec<PathBuf>,
}

/// Optional input overrides for the single-stage commands.
#[derive(Debug, Clone, Default)]
pub struct StagePaths {
    pub schema: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub gold: Option<PathBuf>,
}

type Recorder = RecordingProvider<Arc<dyn Provider>>;

pub struct Pipeline {
    cfg: PipelineConfig,
    templates: TemplateSet,
    pool: rayon::ThreadPool,
    record: Option<PathBuf>,
    force: bool,
    provider: OnceLock<Budgeted<Arc<dyn Provider>>>,
    recorder: OnceLock<Arc<Recorder>>,
}

fn write(
    out: &Path,
    stage: &'static str,
    rel: &str,
    contents: &str,
) -> Result<PathBuf, PipelineError> {
    let path = out.join(rel);
    write_atomic(&path, contents).map_err(|e| PipelineError::data(stage, e))?;
    Ok(path)
}

fn jsonl(records: &[TraceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
        .collect()
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let templates = match &cfg.corpus.templates {
            Some(dir) => {
                TemplateSet::load_dir(dir).map_err(|e| PipelineError::Config(e.to_string()))?
            }
            None => TemplateSet::builtin(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers())
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self {
            cfg,
            templates,
            pool,
            record: None,
            force: false,
            provider: OnceLock::new(),
            recorder: OnceLock::new(),
        })
    }

    /// Records every provider answer into a fixture file at `path`.
    pub fn with_recording(mut self, path: PathBuf) -> Self {
        self.record = Some(path);
        self
    }

    /// Reruns stages even when they are current.
    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out
    }

    /// Provider calls made so far, repair retries included.
    pub fn provider_calls(&self) -> usize {
        self.provider.get().map_or(0, Budgeted::calls)
    }

    /// Identifies the answers a provider would give, for stage digests.
    fn provider_identity(&self) -> Result<String, PipelineError> {
        let p = &self.cfg.provider;
        let Some(path) = self.cfg.provider_file()? else {
            return Ok(format!("http:{}:{}", p.http.base_url, p.http.model));
        };
        let bytes = std::fs::read(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(format!("{:?}:{}", p.mode, crate::model::sha256_hex(&bytes)))
    }

    fn provider(&self) -> Result<&dyn Provider, PipelineError> {
        if let Some(p) = self.provider.get() {
            return Ok(p);
        }
        let p = &self.cfg.provider;
        let cfg_err = |e: LlmError| PipelineError::Config(e.to_string());
        let file = self.cfg.provider_file()?;
        let mut inner: Arc<dyn Provider> = match (p.mode, file) {
            (ProviderMode::Fixture, Some(f)) => {
                Arc::new(FixtureProvider::load(f).map_err(cfg_err)?)
            }
            (ProviderMode::Script, Some(f)) => {
                Arc::new(ScriptedProvider::load(f).map_err(cfg_err)?)
            }
            _ => Arc::new(HttpProvider::new(p.http.clone())),
        };
        if self.record.is_some() {
            let rec = Arc::new(RecordingProvider::new(inner));
            let _ = self.recorder.set(Arc::clone(&rec));
            inner = rec;
        }
        let _ = self.provider.set(Budgeted::new(inner, p.budget));
        Ok(self.provider.get().expect("just set"))
    }

    /// Writes the recorded fixture file, if recording. Safe to call after
    /// a failed stage; whatever was answered is kept.
    pub fn finish(&self) -> Result<Option<usize>, PipelineError> {
        match (&self.record, self.recorder.get()) {
            (Some(path), Some(rec)) => rec
                .write(path)
                .map(Some)
                .map_err(|e| PipelineError::Config(e.to_string())),
            _ => Ok(None),
        }
    }

    fn required<'a>(&self, what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path, PipelineError> {
        p.as_deref()
            .ok_or_else(|| PipelineError::Config(format!("no {what} configured")))
    }

    fn current(&self, stage: &str, inputs: &StageInputs) -> bool {
        !self.force && stage::is_current(&self.cfg.out, stage, inputs)
    }

    fn skipped(&self, stage: &'static str, outputs: &[&str]) -> StageReport {
        log::info!("{stage}: inputs unchanged, skipping");
        StageReport {
            stage,
            status: StageStatus::Skipped,
            outputs: outputs.iter().map(|o| self.cfg.out.join(o)).collect(),
        }
    }

    fn finish_stage(
        &self,
        stage: &'static str,
        inputs: &StageInputs,
        outputs: &[&str],
    ) -> Result<StageReport, PipelineError> {
        stage::record(&self.cfg.out, stage, inputs, outputs)
            .map_err(|e| PipelineError::data(stage, e))?;
        Ok(StageReport {
            stage,
            status: StageStatus::Ran,
            outputs: outputs.iter().map(|o| self.cfg.out.join(o)).collect(),
        })
    }

    /// Seed corpus to potential schema.
    pub fn explore(&self) -> Result<StageReport, PipelineError> {
        const STAGE: &str = "explore";
        let seed = self.required("seed corpus", &self.cfg.corpus.seed)?;
        let inputs = StageInputs::default()
            .file("seed", seed)
            .map_err(|e| file_err(STAGE, e))?
            .value("templates", self.templates.digest(&EXPLORE_UNITS))
            .value("provider", self.provider_identity()?)
            .value("strict", self.cfg.strict.to_string());
        let mut outputs = vec![SCHEMA_POTENTIAL];
        if self.cfg.trace {
            outputs.extend(["trace/explore.jsonl", "trace/explore.seeds.json"]);
        }
        if self.current(STAGE, &inputs) {
            return Ok(self.skipped(STAGE, &outputs));
        }
        let corpus = Corpus::load(seed).map_err(|e| corpus_err(STAGE, e))?;
        let llm = Llm::new(self.provider()?, &self.templates);
        let strict = self.cfg.strict;
        let result = self
            .pool
            .install(|| explore(llm, &corpus, strict))
            .map_err(explore_err)?;
        log::info!(
            "explore: {} seed texts, {} entity types, {} relation types, {} type triples",
            corpus.len(),
            result.schema.entity_types.len(),
            result.schema.relation_types.len(),
            result.schema.type_triples.len()
        );
        let out = &self.cfg.out;
        write(out, STAGE, SCHEMA_POTENTIAL, &result.schema.to_json())?;
        if self.cfg.trace {
            write(out, STAGE, "trace/explore.jsonl", &jsonl(&result.trace()))?;
            let seeds: Vec<_> = result.seeds.iter().map(|s| s.to_json()).collect();
            write(
                out,
                STAGE,
                "trace/explore.seeds.json",
                &to_json_text(&seeds),
            )?;
        }
        self.finish_stage(STAGE, &inputs, &outputs)
    }

    fn schema_path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.cfg.out.join(default))
    }

    /// Filtered target corpus to unreliable KG.
    pub fn construct(&self, paths: &StagePaths) -> Result<StageReport, PipelineError> {
        const STAGE: &str = "construct";
        let target = self.required("target corpus", &self.cfg.corpus.target)?;
        let schema_path = self.schema_path(&paths.schema, SCHEMA_POTENTIAL);
        let inputs = StageInputs::default()
            .file("target", target)
            .map_err(|e| file_err(STAGE, e))?
            .file("schema", &schema_path)
            .map_err(|e| file_err(STAGE, e))?
            .value("templates", self.templates.digest(&CONSTRUCT_UNITS))
            .value("provider", self.provider_identity()?)
            .value("strict", self.cfg.strict.to_string());
        let mut outputs = vec![KG_UNRELIABLE];
        if self.cfg.trace {
            outputs.push("trace/construct.jsonl");
        }
        if self.current(STAGE, &inputs) {
            return Ok(self.skipped(STAGE, &outputs));
        }
        let schema = KgSchema::load(&schema_path).map_err(|e| file_err(STAGE, e))?;
        if schema.validated {
            log::warn!(
                "construct: {} is already validated; using it as given",
                schema_path.display()
            );
        }
        let corpus = Corpus::load(target).map_err(|e| corpus_err(STAGE, e))?;
        let kept = filter_corpus(&corpus);
        log::info!(
            "construct: {} of {} target texts pass the corpus filter",
            kept.len(),
            corpus.len()
        );
        let (kg, trace) = if kept.is_empty() {
            (
                KnowledgeGraph {
                    schema_digest: schema.digest(),
                    ..KnowledgeGraph::default()
                },
                Vec::new(),
            )
        } else {
            let llm = Llm::new(self.provider()?, &self.templates);
            let strict = self.cfg.strict;
            let c = self
                .pool
                .install(|| construct(llm, &kept, &schema, strict))
                .map_err(construct_err)?;
            (c.kg, c.trace)
        };
        log::info!(
            "construct: {} entities, {} triples",
            kg.entities.len(),
            kg.triples.len()
        );
        write(&self.cfg.out, STAGE, KG_UNRELIABLE, &kg.to_json())?;
        if self.cfg.trace {
            write(
                &self.cfg.out,
                STAGE,
                "trace/construct.jsonl",
                &jsonl(&trace),
            )?;
        }
        self.finish_stage(STAGE, &inputs, &outputs)
    }

    /// Metrics, validated schema and reliable KG.
    pub fn filter(&self, paths: &StagePaths) -> Result<StageReport, PipelineError> {
        const STAGE: &str = "filter";
        let schema_path = self.schema_path(&paths.schema, SCHEMA_POTENTIAL);
        let kg_path = paths
            .kg
            .clone()
            .unwrap_or_else(|| self.cfg.out.join(KG_UNRELIABLE));
        let thresholds = self.cfg.filter.thresholds()?;
        let mode = self.cfg.filter.count_mode;
        let inputs = StageInputs::default()
            .file("schema", &schema_path)
            .map_err(|e| file_err(STAGE, e))?
            .file("kg", &kg_path)
            .map_err(|e| file_err(STAGE, e))?
            .value(
                "thresholds",
                format!(
                    "{}|{}|{}|{}",
                    thresholds.support_min,
                    thresholds.confidence_min,
                    thresholds.lift_min,
                    thresholds.inclusive
                ),
            )
            .value("count_mode", format!("{mode:?}"));
        let outputs = [SCHEMA_VALIDATED, KG_RELIABLE, METRICS];
        if self.current(STAGE, &inputs) {
            return Ok(self.skipped(STAGE, &outputs));
        }
        let schema = KgSchema::load(&schema_path).map_err(|e| file_err(STAGE, e))?;
        let kg = KnowledgeGraph::load(&kg_path).map_err(|e| file_err(STAGE, e))?;
        let result = if kg.triples.is_empty() {
            log::warn!("filter: knowledge graph is empty; writing empty outputs");
            let metrics = BTreeMap::new();
            let validated = update_schema(&schema, &metrics, &thresholds);
            Filtered {
                kg: update_kg(&kg, &validated),
                report: metrics_report(&metrics, &validated, &thresholds, mode),
                schema: validated,
            }
        } else {
            filter(&schema, &kg, &thresholds, mode).map_err(|e| PipelineError::data(STAGE, e))?
        };
        log::info!(
            "filter ({thresholds}): {} of {} type triples kept, {} of {} instance triples kept",
            result.schema.type_triples.len(),
            result.report.rows.len(),
            result.kg.triples.len(),
            kg.triples.len()
        );
        let out = &self.cfg.out;
        write(out, STAGE, SCHEMA_VALIDATED, &result.schema.to_json())?;
        write(out, STAGE, KG_RELIABLE, &result.kg.to_json())?;
        write(out, STAGE, METRICS, &to_json_text(&result.report))?;
        self.finish_stage(STAGE, &inputs, &outputs)
    }

    fn embedder(&self) -> Box<dyn Embedder> {
        match self.cfg.eval.embedder {
            EmbedderMode::Lexical => Box::new(LexicalEmbedder),
            EmbedderMode::Http => Box::new(HttpEmbedder::new(self.cfg.eval.http.clone())),
        }
    }

    /// Scores a KG (the reliable one by default) against gold.
    pub fn eval(&self, paths: &StagePaths) -> Result<StageReport, PipelineError> {
        const STAGE: &str = "eval";
        let gold_path = match &paths.gold {
            Some(p) => p.clone(),
            None => self
                .required("gold file", &self.cfg.corpus.gold)?
                .to_path_buf(),
        };
        if !gold_path.exists() {
            return Err(PipelineError::Config(format!(
                "gold file {} does not exist",
                gold_path.display()
            )));
        }
        let kg_path = paths
            .kg
            .clone()
            .unwrap_or_else(|| self.cfg.out.join(KG_RELIABLE));
        let schema_path = self.schema_path(&paths.schema, SCHEMA_VALIDATED);
        let embedder = self.embedder();
        let ev = &self.cfg.eval;
        let mut inputs = StageInputs::default()
            .file("kg", &kg_path)
            .map_err(|e| file_err(STAGE, e))?
            .file("gold", &gold_path)
            .map_err(|e| file_err(STAGE, e))?
            .value("thresholds", format!("{:?}", ev.thresholds))
            .value("embedder", embedder.id())
            .value("match_text", format!("{:?}", ev.match_text));
        if let Some(a) = &self.cfg.corpus.annotations {
            inputs = inputs
                .file("annotations", a)
                .map_err(|e| file_err(STAGE, e))?
                .file("schema", &schema_path)
                .map_err(|e| file_err(STAGE, e))?;
        }
        let outputs = [EVAL_JSON, EVAL_TEXT];
        if self.current(STAGE, &inputs) {
            return Ok(self.skipped(STAGE, &outputs));
        }
        let kg = KnowledgeGraph::load(&kg_path).map_err(|e| file_err(STAGE, e))?;
        let gold = crate::eval::GoldSet::load(&gold_path).map_err(eval_err)?;
        let mut report = score(embedder.as_ref(), &kg, &gold, &ev.thresholds, ev.match_text)
            .map_err(eval_err)?;
        if let Some(a) = &self.cfg.corpus.annotations {
            let annotations: BTreeMap<String, bool> =
                read_json(a).map_err(|e| file_err(STAGE, e))?;
            let schema = KgSchema::load(&schema_path).map_err(|e| file_err(STAGE, e))?;
            report.type_triple_accuracy =
                Some(type_triple_accuracy(&schema.type_triples, &annotations).map_err(eval_err)?);
        }
        let out = &self.cfg.out;
        write(out, STAGE, EVAL_JSON, &to_json_text(&report))?;
        write(out, STAGE, EVAL_TEXT, &report.to_text())?;
        log::info!("eval:\n{}", report.to_text());
        self.finish_stage(STAGE, &inputs, &outputs)
    }

    /// All stages; eval only when a gold file is configured.
    pub fn run(&self) -> Result<Vec<StageReport>, PipelineError> {
        let paths = StagePaths::default();
        let mut reports = vec![
            self.explore()?,
            self.construct(&paths)?,
            self.filter(&paths)?,
        ];
        if self.cfg.corpus.gold.is_some() {
            reports.push(self.eval(&paths)?);
        }
        Ok(reports)
    }
}
