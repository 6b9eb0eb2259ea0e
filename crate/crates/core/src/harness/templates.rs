//! Prompt rendering.
//!
//! Compression prompt:
//!
//! ```text
//! {compression_instruction}
//!
//! Question: {question}
//!
//! Documents: {doc_1}
//! {doc_2}
//! ...
//!
//! Summarized Context:
//! ```
//!
//! Context-generation prompt is the same without documents, ending in
//! `Context:`. The answer prompt is the system prompt, the demonstrations, then
//! `Question:` / `Context:` lines (order set by [`EvalLayout`]) and `Answer:`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::EvidenceBundle;
use crate::vocab::{fnv1a64, Fingerprint};

const DEFAULT_TEMPLATES: &str = include_str!("../../prompts/default.toml");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid template file: {0}")]
    Parse(String),
    #[error("{0} must be non-empty")]
    EmptyInstruction(&'static str),
    #[error("compression and generation instructions must differ")]
    IdenticalInstructions,
    #[error("no demonstrations named {name:?} (available: {available})")]
    UnknownDemonstrations { name: String, available: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalLayout {
    #[default]
    QuestionFirst,
    ContextFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplateSet {
    pub compression_instruction: String,
    pub generation_instruction: String,
    pub eval_system_prompt: String,
    #[serde(default)]
    pub eval_layout: EvalLayout,
    /// Demonstration sets keyed by dataset name.
    #[serde(default)]
    pub demonstrations: BTreeMap<String, Vec<Demonstration>>,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl PromptTemplateSet {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let set: Self = toml::from_str(text).map_err(|e| TemplateError::Parse(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.compression_instruction.trim().is_empty() {
            return Err(TemplateError::EmptyInstruction("compression_instruction"));
        }
        if self.generation_instruction.trim().is_empty() {
            return Err(TemplateError::EmptyInstruction("generation_instruction"));
        }
        if self.compression_instruction == self.generation_instruction {
            return Err(TemplateError::IdenticalInstructions);
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let canonical = serde_json::to_string(self).expect("templates serialize");
        Fingerprint(fnv1a64(canonical.as_bytes()))
    }

    pub fn demonstrations(&self, name: Option<&str>) -> Result<&[Demonstration], TemplateError> {
        match name {
            None => Ok(&[]),
            Some(name) => self
                .demonstrations
                .get(name)
                .map(Vec::as_slice)
                .ok_or_else(|| TemplateError::UnknownDemonstrations {
                    name: name.to_string(),
                    available: self.demonstrations.keys().cloned().collect::<Vec<_>>().join(", "),
                }),
        }
    }

    pub fn render_compression_context(&self, bundle: &EvidenceBundle) -> String {
        format!(
            "{}\n\nQuestion: {}\n\nDocuments: {}\n\nSummarized Context:",
            self.compression_instruction,
            bundle.query,
            bundle.documents.join("\n")
        )
    }

    pub fn render_generation_context(&self, bundle: &EvidenceBundle) -> String {
        format!(
            "{}\n\nQuestion: {}\n\nContext:",
            self.generation_instruction, bundle.query
        )
    }

    fn eval_header(&self, demos: &[Demonstration]) -> String {
        let mut out = self.eval_system_prompt.clone();
        out.push_str("\n\n");
        for d in demos {
            out.push_str(&format!("Question: {}\nAnswer: {}\n\n", d.question, d.answer));
        }
        out
    }

    /// Answer-generation prompt around the compressed evidence.
    pub fn render_eval_prompt(&self, demos: &[Demonstration], question: &str, context: &str) -> String {
        let mut out = self.eval_header(demos);
        match self.eval_layout {
            EvalLayout::QuestionFirst => {
                out.push_str(&format!("Question: {question}\nContext: {context}\nAnswer:"))
            }
            EvalLayout::ContextFirst => {
                out.push_str(&format!("Context: {context}\nQuestion: {question}\nAnswer:"))
            }
        }
        out
    }

    /// Text that conditions the evidence when measuring its perplexity:
    /// system prompt, demonstrations, question and the context cue.
    pub fn render_evidence_prefix(&self, demos: &[Demonstration], question: &str) -> String {
        let mut out = self.eval_header(demos);
        out.push_str(&format!("Question: {question}\nContext:"));
        out
    }
}
