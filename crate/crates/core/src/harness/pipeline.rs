//! End-to-end evaluation: compress, answer, score.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::{check_compatibility, BackendError, Compatibility, LanguageModel};
use crate::decoder::{decode, greedy_decode, score_sequence, DecodeError, ScoreError, StrategyRegistry};
use crate::metrics::{self, compression_rate, ExampleScore, MatcherRegistry};
use crate::types::{validate_alpha, ConfigError, DecodeConfig, EvidenceBundle};
use crate::vocab::Fingerprint;

use super::report::{AnswerRecord, FailureKind, RunReport, RunSnapshot};
use super::templates::{Demonstration, PromptTemplateSet, TemplateError};
use super::tokenizer::{Tokenizer, WhitespaceTokenizer};

pub const DEFAULT_ANSWER_MAX_TOKENS: usize = 32;

#[derive(Clone)]
pub struct Backends {
    pub compression: Arc<dyn LanguageModel>,
    pub target: Arc<dyn LanguageModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub strategy: String,
    pub decode: DecodeConfig,
    pub answer_max_tokens: usize,
    pub metric_mode: String,
    /// Demonstration set for the answer prompt; `None` means zero-shot.
    pub demonstrations: Option<String>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            strategy: "ensemble".into(),
            decode: DecodeConfig::default(),
            answer_max_tokens: DEFAULT_ANSWER_MAX_TOKENS,
            metric_mode: "containment".into(),
            demonstrations: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown strategy {name:?} (available: {available})")]
    UnknownStrategy { name: String, available: String },
    #[error("unknown metric mode {name:?} (available: {available})")]
    UnknownMetricMode { name: String, available: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error("backends do not share a vocabulary: compression {compression}, target {target}")]
    Incompatible {
        compression: Fingerprint,
        target: Fingerprint,
    },
    #[error("invalid alpha grid: {0}")]
    Grid(String),
}

/// A settings value resolved against the registries and templates.
struct Plan<'a> {
    alpha: f64,
    decode: DecodeConfig,
    matcher: &'a dyn metrics::AnswerMatcher,
    demos: &'a [Demonstration],
    answer_max_tokens: usize,
}

pub struct Harness {
    backends: Backends,
    templates: PromptTemplateSet,
    tokenizer: Arc<dyn Tokenizer>,
    strategies: StrategyRegistry,
    matchers: MatcherRegistry,
}

impl Harness {
    /// Uses a whitespace tokenizer over the target model's vocabulary.
    pub fn new(backends: Backends, templates: PromptTemplateSet) -> Self {
        let vocab = Arc::new(backends.target.vocabulary().clone());
        Self::with_tokenizer(backends, templates, Arc::new(WhitespaceTokenizer::new(vocab)))
    }

    pub fn with_tokenizer(backends: Backends, templates: PromptTemplateSet, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            backends,
            templates,
            tokenizer,
            strategies: StrategyRegistry::with_builtins(),
            matchers: MatcherRegistry::with_builtins(),
        }
    }

    pub fn strategies_mut(&mut self) -> &mut StrategyRegistry {
        &mut self.strategies
    }

    pub fn matchers_mut(&mut self) -> &mut MatcherRegistry {
        &mut self.matchers
    }

    pub fn templates(&self) -> &PromptTemplateSet {
        &self.templates
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn check_compatibility(&self) -> Result<(), PipelineError> {
        match check_compatibility(self.backends.compression.descriptor(), self.backends.target.descriptor()) {
            Compatibility::Compatible => Ok(()),
            Compatibility::Incompatible { left, right } => Err(PipelineError::Incompatible {
                compression: left,
                target: right,
            }),
        }
    }

    fn plan(&self, settings: &PipelineSettings) -> Result<Plan<'_>, PipelineError> {
        let strategy = self
            .strategies
            .get(&settings.strategy)
            .ok_or_else(|| PipelineError::UnknownStrategy {
                name: settings.strategy.clone(),
                available: self.strategies.names().join(", "),
            })?;
        let matcher = self
            .matchers
            .get(&settings.metric_mode)
            .ok_or_else(|| PipelineError::UnknownMetricMode {
                name: settings.metric_mode.clone(),
                available: self.matchers.names().join(", "),
            })?;
        settings.decode.validate()?;
        let alpha = validate_alpha(strategy.effective_alpha(settings.decode.alpha))?;
        let demos = self.templates.demonstrations(settings.demonstrations.as_deref())?;
        self.check_compatibility()?;
        Ok(Plan {
            alpha,
            decode: DecodeConfig {
                alpha,
                ..settings.decode.clone()
            },
            matcher,
            demos,
            answer_max_tokens: settings.answer_max_tokens,
        })
    }

    pub fn snapshot(&self, settings: &PipelineSettings) -> Result<RunSnapshot, PipelineError> {
        let plan = self.plan(settings)?;
        Ok(RunSnapshot {
            strategy: settings.strategy.clone(),
            alpha: settings.decode.alpha,
            effective_alpha: plan.alpha,
            compression_backend: self.backends.compression.descriptor().name.clone(),
            target_backend: self.backends.target.descriptor().name.clone(),
            vocabulary_fingerprint: self.backends.target.descriptor().fingerprint().to_hex(),
            templates_fingerprint: self.templates.fingerprint().to_hex(),
            demonstrations: settings.demonstrations.clone(),
            metric_mode: settings.metric_mode.clone(),
            max_new_tokens: settings.decode.max_new_tokens,
            answer_max_tokens: settings.answer_max_tokens,
        })
    }

    /// Tokens in the retrieved documents, counted by the harness tokenizer.
    pub fn retrieved_tokens(&self, bundle: &EvidenceBundle) -> usize {
        bundle
            .documents
            .iter()
            .map(|d| self.tokenizer.count(d).unwrap_or(0))
            .sum()
    }

    /// Compression, answer generation and scoring for one example.
    pub fn run_example(&self, bundle: &EvidenceBundle, settings: &PipelineSettings) -> Result<AnswerRecord, PipelineError> {
        let plan = self.plan(settings)?;
        let compressed = self.compress_stage(bundle, &plan);
        Ok(self.answer_stage(bundle, &plan, compressed))
    }

    /// Compression only: no answer and no score.
    pub fn compress_example(&self, bundle: &EvidenceBundle, settings: &PipelineSettings) -> Result<AnswerRecord, PipelineError> {
        let plan = self.plan(settings)?;
        Ok(self.compress_stage(bundle, &plan))
    }

    fn compress_stage(&self, bundle: &EvidenceBundle, plan: &Plan<'_>) -> AnswerRecord {
        let id = bundle.id.as_str();
        let tok = self.tokenizer.as_ref();
        let encoded = tok
            .encode(&self.templates.render_compression_context(bundle))
            .and_then(|c| Ok((c, tok.encode(&self.templates.render_generation_context(bundle))?)));
        let (comp_ids, gen_ids) = match encoded {
            Ok(v) => v,
            Err(e) => return AnswerRecord::failed(id, FailureKind::Tokenize, e.to_string()),
        };
        match decode(
            self.backends.compression.as_ref(),
            self.backends.target.as_ref(),
            comp_ids,
            gen_ids,
            &plan.decode,
        ) {
            Ok(trace) => match tok.decode(&trace.tokens) {
                Ok(evidence) => AnswerRecord {
                    id: id.to_string(),
                    compressed_evidence: evidence,
                    prediction: String::new(),
                    trace: Some(trace),
                    score: None,
                    error: None,
                },
                Err(e) => AnswerRecord::failed(id, FailureKind::Tokenize, e.to_string()),
            },
            Err(failure) => {
                let mut rec = AnswerRecord::failed(id, decode_failure_kind(&failure.error), failure.to_string());
                rec.compressed_evidence = tok.decode(&failure.tokens).unwrap_or_default();
                rec
            }
        }
    }

    /// Answers from the record's compressed evidence and scores the result.
    /// Failed records pass through unchanged.
    fn answer_stage(&self, bundle: &EvidenceBundle, plan: &Plan<'_>, record: AnswerRecord) -> AnswerRecord {
        if record.error.is_some() {
            return record;
        }
        match self.try_answer(bundle, plan, record) {
            Ok(r) | Err(r) => r,
        }
    }

    fn try_answer(&self, bundle: &EvidenceBundle, plan: &Plan<'_>, mut record: AnswerRecord) -> Result<AnswerRecord, AnswerRecord> {
        let id = bundle.id.as_str();
        let fail = |kind, msg: String| {
            let mut r = AnswerRecord::failed(id, kind, msg);
            r.compressed_evidence = record.compressed_evidence.clone();
            r
        };
        let tok = self.tokenizer.as_ref();
        let target = self.backends.target.as_ref();
        let Some(trace) = record.trace.as_ref() else {
            return Err(fail(FailureKind::Decode, "record has no compression trace".into()));
        };

        let prompt = self
            .templates
            .render_eval_prompt(plan.demos, &bundle.query, &record.compressed_evidence);
        let prompt_ids = tok.encode(&prompt).map_err(|e| fail(FailureKind::Tokenize, e.to_string()))?;
        let answer_ids = greedy_decode(target, &prompt_ids, plan.answer_max_tokens, true)
            .map_err(|e| fail(backend_failure_kind(&e), format!("answer generation: {e}")))?;
        let prediction = tok
            .decode(&answer_ids)
            .map_err(|e| fail(FailureKind::Tokenize, e.to_string()))?;

        let evidence_perplexity = if trace.tokens.is_empty() {
            None
        } else {
            let prefix = self.templates.render_evidence_prefix(plan.demos, &bundle.query);
            let prefix_ids = tok.encode(&prefix).map_err(|e| fail(FailureKind::Tokenize, e.to_string()))?;
            let scored = score_sequence(target, &prefix_ids, &trace.tokens).map_err(|e| {
                let kind = match &e {
                    ScoreError::Backend(b) => backend_failure_kind(b),
                    _ => FailureKind::Metric,
                };
                fail(kind, format!("evidence perplexity: {e}"))
            })?;
            Some(scored.perplexity)
        };
        let cr = compression_rate(self.retrieved_tokens(bundle), trace.tokens.len())
            .map_err(|e| fail(FailureKind::Metric, e.to_string()))?;
        let golds = &bundle.gold_answers;
        record.score = Some(ExampleScore {
            accuracy: plan.matcher.score(&prediction, golds),
            accuracy_containment: metrics::accuracy(&prediction, golds),
            accuracy_exact: metrics::exact_match(&prediction, golds),
            f1: metrics::token_f1(&prediction, golds),
            hits: metrics::hits(&bundle.documents, golds),
            compression_rate: cr,
            evidence_perplexity,
        });
        record.prediction = prediction;
        Ok(record)
    }

    /// Runs every example in parallel; records keep dataset order.
    pub fn run_dataset(&self, bundles: &[EvidenceBundle], settings: &PipelineSettings) -> Result<RunReport, PipelineError> {
        let snapshot = self.snapshot(settings)?;
        let plan = self.plan(settings)?;
        let records = bundles
            .par_iter()
            .map(|b| self.answer_stage(b, &plan, self.compress_stage(b, &plan)))
            .collect();
        Ok(RunReport::new(snapshot, records))
    }

    pub fn compress_dataset(&self, bundles: &[EvidenceBundle], settings: &PipelineSettings) -> Result<RunReport, PipelineError> {
        let snapshot = self.snapshot(settings)?;
        let plan = self.plan(settings)?;
        let records = bundles.par_iter().map(|b| self.compress_stage(b, &plan)).collect();
        Ok(RunReport::new(snapshot, records))
    }

    /// Answers and scores previously compressed records, matched to bundles by id.
    pub fn answer_dataset(
        &self,
        bundles: &[EvidenceBundle],
        compressed: &[AnswerRecord],
        settings: &PipelineSettings,
    ) -> Result<RunReport, PipelineError> {
        let snapshot = self.snapshot(settings)?;
        let plan = self.plan(settings)?;
        let by_id: HashMap<&str, &AnswerRecord> = compressed.iter().map(|r| (r.id.as_str(), r)).collect();
        let records = bundles
            .par_iter()
            .map(|b| match by_id.get(b.id.as_str()) {
                Some(r) => self.answer_stage(b, &plan, (*r).clone()),
                None => AnswerRecord::failed(&b.id, FailureKind::Decode, "no compressed evidence for this id"),
            })
            .collect();
        Ok(RunReport::new(snapshot, records))
    }

    /// One full ensemble run per grid value.
    pub fn sweep_alpha(
        &self,
        bundles: &[EvidenceBundle],
        settings: &PipelineSettings,
        grid: &[f64],
    ) -> Result<Vec<(f64, RunReport)>, PipelineError> {
        validate_grid(grid)?;
        grid.iter()
            .map(|&alpha| {
                let s = PipelineSettings {
                    strategy: "ensemble".into(),
                    decode: DecodeConfig {
                        alpha,
                        ..settings.decode.clone()
                    },
                    ..settings.clone()
                };
                self.run_dataset(bundles, &s).map(|r| (alpha, r))
            })
            .collect()
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<(), PipelineError> {
    if grid.is_empty() {
        return Err(PipelineError::Grid("grid is empty".into()));
    }
    for (i, &a) in grid.iter().enumerate() {
        validate_alpha(a).map_err(|e| PipelineError::Grid(e.to_string()))?;
        if grid[..i].contains(&a) {
            return Err(PipelineError::Grid(format!("duplicate value {a}")));
        }
    }
    Ok(())
}

fn backend_failure_kind(e: &BackendError) -> FailureKind {
    match e {
        BackendError::FingerprintMismatch { .. } => FailureKind::Incompatible,
        _ => FailureKind::Backend,
    }
}

fn decode_failure_kind(e: &DecodeError) -> FailureKind {
    match e {
        DecodeError::Incompatible { .. } => FailureKind::Incompatible,
        DecodeError::Backend { source, .. } => backend_failure_kind(source),
        _ => FailureKind::Decode,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub const SWEEP_HEADER: &str = "alpha\tn\tacc\tf1\tppl\tcr\tacc_hits0\tacc_hits1";

/// Tab-separated sweep table, one row per grid value. Numbers use the
/// shortest representation that round-trips.
pub fn sweep_table(reports: &[(f64, RunReport)]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for (alpha, r) in reports {
        let a = r.aggregates();
        out.push_str(&format!(
            "{alpha}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            a.overall.count,
            cell(a.overall.acc),
            cell(a.overall.f1),
            cell(a.overall.ppl),
            cell(a.overall.cr),
            cell(a.hits0.acc),
            cell(a.hits1.acc),
        ));
    }
    out
}
