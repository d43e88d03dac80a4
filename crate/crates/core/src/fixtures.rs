//! Golden-run verification for the shipped fixture kits.
//!
//! A kit is a config file whose corpora, recorded responses and gold
//! annotations live under `fixtures/`, plus a directory of expected
//! artifacts. Verification reruns the whole chain from scratch and
//! compares every artifact byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, ARTIFACTS, EVAL_JSON, EVAL_TEXT};

/// Directory holding the shipped kits.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileOutcome {
    Same,
    /// First differing line, 1-based.
    Differs {
        line: usize,
        expected: String,
        actual: String,
    },
    MissingGolden,
    MissingOutput,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCheck {
    pub name: String,
    pub outcome: FileOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenReport {
    pub files: Vec<FileCheck>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.files.iter().all(|f| f.outcome == FileOutcome::Same)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FileCheck> {
        self.files.iter().filter(|f| f.outcome != FileOutcome::Same)
    }
}

impl fmt::Display for GoldenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.files {
            match &c.outcome {
                FileOutcome::Same => writeln!(f, "ok       {}", c.name)?,
                FileOutcome::Differs {
                    line,
                    expected,
                    actual,
                } => {
                    writeln!(f, "DIFFERS  {} at line {line}", c.name)?;
                    writeln!(f, "  expected: {expected}")?;
                    writeln!(f, "  actual:   {actual}")?;
                }
                FileOutcome::MissingGolden => writeln!(f, "MISSING  {} (no golden copy)", c.name)?,
                FileOutcome::MissingOutput => writeln!(f, "MISSING  {} (not produced)", c.name)?,
            }
        }
        Ok(())
    }
}

fn compare(expected: &str, actual: &str) -> FileOutcome {
    if expected == actual {
        return FileOutcome::Same;
    }
    let mut e = expected.lines();
    let mut a = actual.lines();
    let mut line = 1;
    loop {
        match (e.next(), a.next()) {
            (Some(x), Some(y)) if x == y => line += 1,
            (x, y) => {
                return FileOutcome::Differs {
                    line,
                    expected: x.unwrap_or("<end of file>").to_string(),
                    actual: y.unwrap_or("<end of file>").to_string(),
                }
            }
        }
    }
}

/// Artifacts a run with this config produces.
pub fn expected_artifacts(cfg: &PipelineConfig) -> Vec<&'static str> {
    ARTIFACTS
        .iter()
        .copied()
        .filter(|a| cfg.corpus.gold.is_some() || (*a != EVAL_JSON && *a != EVAL_TEXT))
        .collect()
}

/// Runs the full chain into `work_dir` (forcing every stage) and diffs the
/// artifacts against `golden_dir`. With `bless`, the golden copies are
/// overwritten instead and the report shows them as equal.
pub fn verify_golden(
    mut cfg: PipelineConfig,
    golden_dir: &Path,
    work_dir: &Path,
    bless: bool,
) -> Result<GoldenReport, PipelineError> {
    cfg.out = work_dir.to_path_buf();
    let artifacts = expected_artifacts(&cfg);
    let pipeline = Pipeline::new(cfg)?.with_force(true);
    pipeline.run()?;
    let mut files = Vec::new();
    for name in artifacts {
        let actual = fs::read_to_string(work_dir.join(name)).ok();
        let golden_path = golden_dir.join(name);
        if bless {
            if let Some(a) = &actual {
                fs::create_dir_all(golden_dir)
                    .and_then(|_| fs::write(&golden_path, a))
                    .map_err(|e| {
                        PipelineError::Config(format!(
                            "cannot write {}: {e}",
                            golden_path.display()
                        ))
                    })?;
            }
        }
        let expected = fs::read_to_string(&golden_path).ok();
        let outcome = match (expected, actual) {
            (_, None) => FileOutcome::MissingOutput,
            (None, _) => FileOutcome::MissingGolden,
            (Some(e), Some(a)) => compare(&e, &a),
        };
        files.push(FileCheck {
            name: name.to_string(),
            outcome,
        });
    }
    Ok(GoldenReport { files })
}
