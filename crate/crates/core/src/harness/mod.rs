//! Dataset ingestion, prompt rendering, the evaluation pipeline and reports.

pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod templates;
pub mod tokenizer;

pub use ingest::{ingest, parse_dataset, IngestError, IngestOutcome};
pub use pipeline::{sweep_table, validate_grid, Backends, Harness, PipelineError, PipelineSettings};
pub use report::{split_by_hits, AnswerRecord, Aggregate, Aggregates, RunReport, ScoreRecord};
pub use templates::{EvalLayout, PromptTemplateSet};
pub use tokenizer::{Tokenizer, WhitespaceTokenizer};
