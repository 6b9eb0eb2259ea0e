//! Per-example records, aggregates and their on-disk form.
//!
//! A run directory holds:
//!
//! - `records.jsonl`: one [`AnswerRecord`] per example, in dataset order
//! - `scores.jsonl`: one [`ScoreRecord`] per scored example (`id, acc, f1, hits, cr, ppl`
//!   plus both accuracy variants)
//! - `traces.jsonl`: one line per decode step, see [`TraceLine`]
//! - `summary.json`: run configuration and aggregates

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logprobs::real;
use crate::metrics::ExampleScore;
use crate::types::{CompressionTrace, SourceTag, StepRecord};
use crate::vocab::TokenId;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Backends disagree on the vocabulary (locally or at the server).
    Incompatible,
    Backend,
    Decode,
    Tokenize,
    Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub id: String,
    pub compressed_evidence: String,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<CompressionTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ExampleScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RecordError>,
}

impl AnswerRecord {
    pub fn failed(id: &str, kind: FailureKind, message: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            compressed_evidence: String::new(),
            prediction: String::new(),
            trace: None,
            score: None,
            error: Some(RecordError {
                kind,
                message: message.into(),
            }),
        }
    }

    pub fn score_record(&self) -> Option<ScoreRecord> {
        self.score.as_ref().map(|s| ScoreRecord {
            id: self.id.clone(),
            acc: s.accuracy,
            f1: s.f1,
            hits: s.hits,
            cr: s.compression_rate,
            ppl: s.evidence_perplexity,
            acc_containment: s.accuracy_containment,
            acc_exact: s.accuracy_exact,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub acc: u8,
    pub f1: f64,
    pub hits: u8,
    pub cr: f64,
    #[serde(with = "real::option")]
    pub ppl: Option<f64>,
    pub acc_containment: u8,
    pub acc_exact: u8,
}

/// Means over a set of scored examples. Empty sets have `count == 0` and no means.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub acc: Option<f64>,
    pub acc_containment: Option<f64>,
    pub acc_exact: Option<f64>,
    pub f1: Option<f64>,
    pub cr: Option<f64>,
    /// Mean over examples with non-empty evidence only.
    #[serde(with = "real::option")]
    pub ppl: Option<f64>,
    pub ppl_count: usize,
}

impl Aggregate {
    /// Sums in iteration order, so the same records in the same order give
    /// bit-identical means.
    pub fn from_scores<'a>(scores: impl IntoIterator<Item = &'a ScoreRecord>) -> Self {
        let (mut n, mut acc, mut acc_c, mut acc_e, mut f1, mut cr) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut ppl, mut ppl_n) = (0.0, 0usize);
        for s in scores {
            n += 1;
            acc += f64::from(s.acc);
            acc_c += f64::from(s.acc_containment);
            acc_e += f64::from(s.acc_exact);
            f1 += s.f1;
            cr += s.cr;
            if let Some(p) = s.ppl {
                ppl += p;
                ppl_n += 1;
            }
        }
        let mean = |total: f64| (n > 0).then(|| total / n as f64);
        Self {
            count: n,
            acc: mean(acc),
            acc_containment: mean(acc_c),
            acc_exact: mean(acc_e),
            f1: mean(f1),
            cr: mean(cr),
            ppl: (ppl_n > 0).then(|| ppl / ppl_n as f64),
            ppl_count: ppl_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: Aggregate,
    pub hits0: Aggregate,
    pub hits1: Aggregate,
}

impl Aggregates {
    pub fn from_scores(scores: &[ScoreRecord]) -> Self {
        Self {
            overall: Aggregate::from_scores(scores),
            hits0: Aggregate::from_scores(scores.iter().filter(|s| s.hits == 0)),
            hits1: Aggregate::from_scores(scores.iter().filter(|s| s.hits == 1)),
        }
    }
}

/// Snapshot of everything that determined a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub strategy: String,
    pub alpha: f64,
    pub effective_alpha: f64,
    pub compression_backend: String,
    pub target_backend: String,
    pub vocabulary_fingerprint: String,
    pub templates_fingerprint: String,
    pub demonstrations: Option<String>,
    pub metric_mode: String,
    pub max_new_tokens: usize,
    pub answer_max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunSnapshot,
    pub total: usize,
    pub failed: usize,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<AnswerRecord>,
    pub summary: Summary,
}

impl RunReport {
    pub fn new(config: RunSnapshot, records: Vec<AnswerRecord>) -> Self {
        let scores = score_records(&records);
        let failed = records.iter().filter(|r| r.error.is_some()).count();
        Self {
            summary: Summary {
                config,
                total: records.len(),
                failed,
                aggregates: Aggregates::from_scores(&scores),
            },
            records,
        }
    }

    pub fn aggregates(&self) -> &Aggregates {
        &self.summary.aggregates
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.summary.total == 0 {
            0.0
        } else {
            self.summary.failed as f64 / self.summary.total as f64
        }
    }
}

pub fn score_records(records: &[AnswerRecord]) -> Vec<ScoreRecord> {
    records.iter().filter_map(AnswerRecord::score_record).collect()
}

/// Aggregates for the Hits=0 and Hits=1 subsets of a report.
pub fn split_by_hits(report: &RunReport) -> (Aggregate, Aggregate) {
    let scores = score_records(&report.records);
    let a = Aggregates::from_scores(&scores);
    (a.hits0, a.hits1)
}

/// One decode step as written to `traces.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub id: String,
    pub step: usize,
    pub token: TokenId,
    #[serde(with = "real")]
    pub target_logprob: f64,
    #[serde(with = "real")]
    pub compression_logprob: f64,
    #[serde(with = "real")]
    pub combined_score: f64,
    pub source: SourceTag,
    pub target_argmax: TokenId,
    pub compression_argmax: TokenId,
    /// True for the step that selected end-of-sequence.
    pub stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_vec")]
    pub target_dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_vec")]
    pub compression_dist: Option<Vec<f64>>,
}

mod opt_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "crate::logprobs::real::vec")] Vec<f64>);

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| W(v.clone())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

pub fn trace_lines(id: &str, trace: &CompressionTrace) -> Vec<TraceLine> {
    let stop_index = trace.per_step.len();
    trace
        .all_steps()
        .enumerate()
        .map(|(i, s): (usize, &StepRecord)| {
            let dists = trace.distributions.get(i);
            TraceLine {
                id: id.to_string(),
                step: i,
                token: s.token,
                target_logprob: s.target_logprob,
                compression_logprob: s.compression_logprob,
                combined_score: s.combined_score,
                source: s.source,
                target_argmax: s.target_argmax,
                compression_argmax: s.compression_argmax,
                stop: i == stop_index,
                target_dist: dists.map(|d| d.target.clone()),
                compression_dist: dists.map(|d| d.compression.clone()),
            }
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReportError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes the four report files into `dir`, creating it if needed.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join(RECORDS_FILE), &to_jsonl(&report.records))?;
    write_file(&dir.join(SCORES_FILE), &to_jsonl(score_records(&report.records)))?;
    let traces = report
        .records
        .iter()
        .filter_map(|r| r.trace.as_ref().map(|t| trace_lines(&r.id, t)))
        .flatten();
    write_file(&dir.join(TRACES_FILE), &to_jsonl(traces))?;
    write_file(&dir.join(SUMMARY_FILE), &summary_json(&report.summary))
}

pub fn read_summary(dir: &Path) -> Result<Summary, ReportError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Stored aggregates next to the ones recomputed from `scores.jsonl`.
pub fn reaggregate(dir: &Path) -> Result<(Aggregates, Aggregates), ReportError> {
    let stored = read_summary(dir)?.aggregates;
    let scores: Vec<ScoreRecord> = read_jsonl(&dir.join(SCORES_FILE))?;
    Ok((stored, Aggregates::from_scores(&scores)))
}
