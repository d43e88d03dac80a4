//! Run configuration: one TOML file, paths relative to the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::{EmbedderSettings, MatchText, DEFAULT_THRESHOLDS};
use crate::filter::{CountMode, Thresholds};
use crate::llm::HttpSettings;

use super::PipelineError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    /// Replay recorded responses.
    #[default]
    Fixture,
    /// Chat-completion endpoint.
    Http,
    /// Rule-based responder for authoring fixtures.
    Script,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderMode {
    #[default]
    Lexical,
    Http,
}

/// A threshold written either as a TOML number or a decimal string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decimal {
    Number(f64),
    Text(String),
}

impl Decimal {
    /// Shortest decimal form, which is what the user wrote for numbers.
    pub fn as_text(&self) -> String {
        match self {
            Decimal::Number(n) => format!("{n}"),
            Decimal::Text(s) => s.clone(),
        }
    }
}

impl From<&str> for Decimal {
    fn from(s: &str) -> Self {
        Decimal::Text(s.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub seed: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    /// JSON map `head|relation|tail` -> bool, scored against the
    /// validated schema.
    pub annotations: Option<PathBuf>,
    /// Directory of `<unit>.prompt` files; built-in templates otherwise.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub fixtures: Option<PathBuf>,
    pub script: Option<PathBuf>,
    /// Maximum provider calls for the whole invocation.
    pub budget: Option<usize>,
    pub http: HttpSettings,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Fixture,
            fixtures: None,
            script: None,
            budget: None,
            http: HttpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub support: Decimal,
    pub confidence: Decimal,
    pub lift: Decimal,
    pub inclusive: bool,
    pub count_mode: CountMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            support: "0.005".into(),
            confidence: "0.02".into(),
            lift: "1.0".into(),
            inclusive: false,
            count_mode: CountMode::Occurrence,
        }
    }
}

impl FilterConfig {
    pub fn thresholds(&self) -> Result<Thresholds, PipelineError> {
        Thresholds::parse(
            &self.support.as_text(),
            &self.confidence.as_text(),
            &self.lift.as_text(),
            self.inclusive,
        )
        .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub embedder: EmbedderMode,
    pub match_text: MatchText,
    pub http: EmbedderSettings,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            embedder: EmbedderMode::Lexical,
            match_text: MatchText::Triple,
            http: EmbedderSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out: PathBuf,
    /// Worker threads for per-text stages; defaults to the HTTP in-flight
    /// limit.
    pub workers: Option<usize>,
    pub trace: bool,
    pub strict: bool,
    pub corpus: CorpusPaths,
    pub provider: ProviderConfig,
    pub filter: FilterConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            workers: None,
            trace: false,
            strict: false,
            corpus: CorpusPaths::default(),
            provider: ProviderConfig::default(),
            filter: FilterConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl FromStr for PipelineConfig {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }
}

impl PipelineConfig {
    /// Reads a config file and makes its relative paths relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = text.parse().map_err(|e: PipelineError| {
            PipelineError::Config(format!("{}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        if self.out.is_relative() {
            self.out = base.join(&self.out);
        }
        for p in [
            &mut self.corpus.seed,
            &mut self.corpus.target,
            &mut self.corpus.gold,
            &mut self.corpus.annotations,
            &mut self.corpus.templates,
            &mut self.provider.fixtures,
            &mut self.provider.script,
        ] {
            rebase(base, p);
        }
    }

    /// Checks values and that every configured input exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.filter.thresholds()?;
        for &t in &self.eval.thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(PipelineError::Config(format!(
                    "eval threshold {t} outside (0, 1]"
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        for (what, p) in [
            ("seed corpus", &self.corpus.seed),
            ("target corpus", &self.corpus.target),
            ("gold file", &self.corpus.gold),
            ("annotation file", &self.corpus.annotations),
            ("template directory", &self.corpus.templates),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(PipelineError::Config(format!(
                        "{what} {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The responses or rules file the provider mode reads; `None` for HTTP.
    /// Checked only when a stage needs the provider.
    pub fn provider_file(&self) -> Result<Option<&Path>, PipelineError> {
        let (path, key) = match self.provider.mode {
            ProviderMode::Fixture => (&self.provider.fixtures, "fixtures"),
            ProviderMode::Script => (&self.provider.script, "script"),
            ProviderMode::Http => return Ok(None),
        };
        path.as_deref().map(Some).ok_or_else(|| {
            PipelineError::Config(format!(
                "{:?} mode needs provider.{key}",
                self.provider.mode
            ))
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or(self.provider.http.max_in_flight)
            .max(1)
    }
}
