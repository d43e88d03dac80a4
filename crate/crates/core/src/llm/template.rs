//! Structured prompt templates.
//!
//! A template file (`<unit>.prompt`) is a TOML document with three tables
//! mirroring the prompt anatomy: `persona`, `context_control` and
//! `instruction`. Commands reference input slots as `{{slot}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub term: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub description: String,
    #[serde(default)]
    pub terminology: Vec<Term>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextControl {
    #[serde(default)]
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub input_variables: Vec<Slot>,
    pub commands: Vec<String>,
    pub output_variable: Slot,
    #[serde(default)]
    pub rules: Vec<String>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub persona: Persona,
    #[serde(default)]
    pub context_control: ContextControl,
    pub instruction: Instruction,
}

/// Returns every `{{name}}` reference in `text`, in order of appearance.
fn slot_refs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(after[..end].trim());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

impl PromptTemplate {
    /// Parses and validates a template document.
    pub fn parse(unit: &str, source: &str) -> Result<Self, LlmError> {
        let template: PromptTemplate =
            toml::from_str(source).map_err(|e| LlmError::InvalidTemplate {
                unit: unit.to_string(),
                message: e.to_string(),
            })?;
        template.validate(unit)?;
        Ok(template)
    }

    pub fn load(unit: &str, path: &Path) -> Result<Self, LlmError> {
        let source = fs::read_to_string(path).map_err(|e| LlmError::InvalidTemplate {
            unit: unit.to_string(),
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(unit, &source)
    }

    fn validate(&self, unit: &str) -> Result<(), LlmError> {
        let invalid = |message: String| LlmError::InvalidTemplate {
            unit: unit.to_string(),
            message,
        };
        let ins = &self.instruction;
        if ins.commands.is_empty() {
            return Err(invalid("at least one command is required".into()));
        }
        if ins.examples.is_empty() {
            return Err(invalid("at least one example is required".into()));
        }
        let mut declared = BTreeSet::new();
        for slot in &ins.input_variables {
            if !declared.insert(slot.name.as_str()) {
                return Err(invalid(format!(
                    "input slot {:?} declared twice",
                    slot.name
                )));
            }
        }
        for cmd in &ins.commands {
            for r in slot_refs(cmd) {
                if !declared.contains(r) {
                    return Err(invalid(format!("command references undeclared slot {r:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn input_slots(&self) -> impl Iterator<Item = &str> {
        self.instruction
            .input_variables
            .iter()
            .map(|s| s.name.as_str())
    }

    /// Renders the prompt text. Every declared slot must be bound and no
    /// undeclared slot may be bound.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, LlmError> {
        for slot in self.input_slots() {
            if !bindings.contains_key(slot) {
                return Err(LlmError::MissingBinding(slot.to_string()));
            }
        }
        for key in bindings.keys() {
            if !self.input_slots().any(|s| s == key) {
                return Err(LlmError::UnknownSlot(key.clone()));
            }
        }

        let mut out = String::new();
        out.push_str("@Persona\n");
        out.push_str("@Description\n");
        out.push_str(self.persona.description.trim_end());
        out.push('\n');
        if !self.persona.terminology.is_empty() {
            out.push_str("@Terminology\n");
            for t in &self.persona.terminology {
                let _ = writeln!(out, "- {}: {}", t.term, t.definition);
            }
        }

        out.push_str("\n@ContextControl\n");
        for rule in &self.context_control.rules {
            let _ = writeln!(out, "- {rule}");
        }

        let ins = &self.instruction;
        out.push_str("\n@Instruction\n");
        out.push_str("@InputVariable\n");
        for slot in &ins.input_variables {
            if slot.description.is_empty() {
                let _ = writeln!(out, "- {}", slot.name);
            } else {
                let _ = writeln!(out, "- {}: {}", slot.name, slot.description);
            }
        }
        out.push_str("@Commands\n");
        for (i, cmd) in ins.commands.iter().enumerate() {
            let _ = writeln!(out, "{}. {}", i + 1, substitute(cmd, bindings));
        }
        out.push_str("@OutputVariable\n");
        if ins.output_variable.description.is_empty() {
            let _ = writeln!(out, "- {}", ins.output_variable.name);
        } else {
            let _ = writeln!(
                out,
                "- {}: {}",
                ins.output_variable.name, ins.output_variable.description
            );
        }
        if !ins.rules.is_empty() {
            out.push_str("@Rules\n");
            for rule in &ins.rules {
                let _ = writeln!(out, "- {rule}");
            }
        }
        out.push_str("@Example\n");
        for (i, ex) in ins.examples.iter().enumerate() {
            let _ = writeln!(out, "Example {}:", i + 1);
            let _ = writeln!(out, "Input:\n{}", ex.input.trim_end());
            let _ = writeln!(out, "Output:\n{}", ex.output.trim_end());
        }
        Ok(out)
    }
}

// Single pass: bound values are never rescanned for slot markers.
fn substitute(text: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = after[..end].trim();
                match bindings.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(&after[..end]);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
