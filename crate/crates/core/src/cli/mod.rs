//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 backend incompatibility, 4 too many failed examples.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::backend::{BackendError, BackendRegistry, BackendSpec, LanguageModel};
use crate::decoder::score_sequence;
use crate::harness::report::{self, FailureKind, ReportError, RECORDS_FILE};
use crate::harness::{
    ingest, sweep_table, Aggregate, Aggregates, AnswerRecord, Backends, Harness, PipelineError, PromptTemplateSet,
    RunReport, Tokenizer, WhitespaceTokenizer,
};
use crate::logprobs::real;
use crate::types::EvidenceBundle;

use config::{FileConfig, Overrides, RunConfig, COMPRESSION_ENDPOINT_ENV, TARGET_ENDPOINT_ENV};

pub const SWEEP_FILE: &str = "sweep.tsv";

#[derive(Debug, Parser)]
#[command(name = "evcomp", version, about = "Evidence compression by two-model ensemble decoding")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset of pre-retrieved evidence (JSON lines).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Target-model weight in [0, 1].
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Report directory [default: evcomp-out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fail on the first malformed dataset line instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Accuracy used for the Acc column
    #[arg(long, global = true, value_parser = ["containment", "exact"])]
    pub metric_mode: Option<String>,
    /// Cap on compressed-evidence tokens
    #[arg(long, global = true)]
    pub max_new_tokens: Option<usize>,
    /// ensemble, compression-only or generation-only.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress every example's evidence and write traces.
    Compress,
    /// Answer and score from the evidence of an earlier `compress` run.
    Answer {
        /// Output directory of the `compress` run.
        #[arg(long)]
        evidence: PathBuf,
    },
    /// Compress, answer and score; print Acc/F1/CR/PPL with Hits subsets.
    Evaluate {
        /// Recompute aggregates from the scores in --out and compare with the stored summary.
        #[arg(long)]
        reaggregate: bool,
    },
    /// One evaluation per alpha, plus a consolidated table.
    Sweep {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        grid: Option<Vec<f64>>,
    },
    /// Log-likelihood and perplexity of a text under one backend.
    Score {
        #[arg(long, default_value = "target", value_parser = ["compression", "target"])]
        backend: String,
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long)]
        text: String,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("incompatible backends: {0}")]
    Incompatible(String),
    #[error("{failed} of {total} examples failed (tolerated fraction {tolerated})")]
    PartialFailure { failed: usize, total: usize, tolerated: f64 },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Incompatible(_) => 3,
            CliError::PartialFailure { .. } => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Incompatible { .. } => CliError::Incompatible(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Other(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&cli.global, &cli.command)?;
    match cli.command {
        Command::Compress => cmd_compress(&cfg, out),
        Command::Answer { evidence } => cmd_answer(&cfg, &evidence, out),
        Command::Evaluate { reaggregate: true } => cmd_reaggregate(&cfg, out),
        Command::Evaluate { reaggregate: false } => cmd_evaluate(&cfg, out),
        Command::Sweep { .. } => cmd_sweep(&cfg, out),
        Command::Score { backend, prefix, text } => cmd_score(&cfg, &backend, &prefix, &text, out),
    }
}

fn env_nonempty(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

fn load_config(g: &GlobalArgs, command: &Command) -> Result<RunConfig, CliError> {
    let (file, base) = match &g.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (FileConfig::load(p).map_err(CliError::Config)?, base)
        }
        None => (FileConfig::default(), PathBuf::new()),
    };
    let grid = match command {
        Command::Sweep { grid } => grid.clone(),
        _ => None,
    };
    let overrides = Overrides {
        dataset: g.dataset.clone(),
        out: g.out.clone(),
        alpha: g.alpha,
        grid,
        max_new_tokens: g.max_new_tokens,
        metric_mode: g.metric_mode.clone(),
        strategy: g.strategy.clone(),
        strict: g.strict,
        compression_endpoint: env_nonempty(COMPRESSION_ENDPOINT_ENV),
        target_endpoint: env_nonempty(TARGET_ENDPOINT_ENV),
    };
    RunConfig::resolve(file, &base, overrides).map_err(CliError::Config)
}

fn build_backend(spec: &BackendSpec, base: &Path) -> Result<Arc<dyn LanguageModel>, CliError> {
    BackendRegistry::with_builtins()
        .build(spec, base)
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Builds both backends and asks each for one distribution so that a remote
/// server with a different vocabulary is caught before any example runs.
fn build_backends(cfg: &RunConfig) -> Result<Backends, CliError> {
    let section = cfg
        .backends
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [backends.compression] and [backends.target]".into()))?;
    let backends = Backends {
        compression: build_backend(&section.compression, &cfg.base_dir)?,
        target: build_backend(&section.target, &cfg.base_dir)?,
    };
    for lm in [&backends.compression, &backends.target] {
        match lm.next_token_distribution(&[]) {
            Err(e @ BackendError::FingerprintMismatch { .. }) => {
                return Err(CliError::Incompatible(format!("{}: {e}", lm.descriptor().name)))
            }
            Err(e) => log::warn!("preflight query to {} failed: {e}", lm.descriptor().name),
            Ok(_) => {}
        }
    }
    Ok(backends)
}

fn build_harness(cfg: &RunConfig) -> Result<Harness, CliError> {
    let mut templates = match &cfg.templates {
        Some(p) => PromptTemplateSet::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => PromptTemplateSet::default(),
    };
    if let Some(layout) = cfg.eval_layout {
        templates.eval_layout = layout;
    }
    let harness = Harness::new(build_backends(cfg)?, templates);
    harness.check_compatibility()?;
    // resolves strategy, metric mode and demonstrations up front
    harness.snapshot(&cfg.settings)?;
    Ok(harness)
}

fn load_dataset(cfg: &RunConfig) -> Result<Vec<EvidenceBundle>, CliError> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("no dataset given (--dataset or `dataset` in the config file)".into()))?;
    let outcome = ingest(path, cfg.strict).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if outcome.bundles.is_empty() {
        return Err(CliError::Config(format!("{}: dataset has no usable examples", path.display())));
    }
    Ok(outcome.bundles)
}

fn check_failures(report: &RunReport, cfg: &RunConfig) -> Result<(), CliError> {
    let incompatible = report
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| (r, e)))
        .find(|(_, e)| e.kind == FailureKind::Incompatible);
    if let Some((r, e)) = incompatible {
        return Err(CliError::Incompatible(format!("example {}: {}", r.id, e.message)));
    }
    if report.failure_fraction() > cfg.max_failure_fraction {
        return Err(CliError::PartialFailure {
            failed: report.summary.failed,
            total: report.summary.total,
            tolerated: cfg.max_failure_fraction,
        });
    }
    Ok(())
}

fn io(e: std::io::Error) -> CliError {
    CliError::Other(e.to_string())
}

fn cmd_compress(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let harness = build_harness(cfg)?;
    let bundles = load_dataset(cfg)?;
    let report = harness.compress_dataset(&bundles, &cfg.settings)?;
    report::write_report(&cfg.out, &report)?;

    let (mut n, mut len_sum, mut cr_sum) = (0usize, 0usize, 0.0);
    for (b, r) in bundles.iter().zip(&report.records) {
        if let Some(t) = &r.trace {
            n += 1;
            len_sum += t.tokens.len();
            cr_sum += harness.retrieved_tokens(b) as f64 / t.tokens.len().max(1) as f64;
        }
    }
    let mean = |s: f64| if n == 0 { "-".to_string() } else { format!("{:.2}", s / n as f64) };
    writeln!(out, "examples\t{}", report.summary.total).map_err(io)?;
    writeln!(out, "failed\t{}", report.summary.failed).map_err(io)?;
    writeln!(out, "mean_compressed_tokens\t{}", mean(len_sum as f64)).map_err(io)?;
    writeln!(out, "mean_compression_rate\t{}", mean(cr_sum)).map_err(io)?;
    check_failures(&report, cfg)
}

fn cmd_answer(cfg: &RunConfig, evidence: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let harness = build_harness(cfg)?;
    let bundles = load_dataset(cfg)?;
    let compressed: Vec<AnswerRecord> = report::read_jsonl(&evidence.join(RECORDS_FILE))?;
    let report = harness.answer_dataset(&bundles, &compressed, &cfg.settings)?;
    report::write_report(&cfg.out, &report)?;
    write_table(out, report.aggregates())?;
    check_failures(&report, cfg)
}

fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let harness = build_harness(cfg)?;
    let bundles = load_dataset(cfg)?;
    let report = harness.run_dataset(&bundles, &cfg.settings)?;
    report::write_report(&cfg.out, &report)?;
    write_table(out, report.aggregates())?;
    check_failures(&report, cfg)
}

fn cmd_reaggregate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (stored, recomputed) = report::reaggregate(&cfg.out)?;
    write_table(out, &recomputed)?;
    if stored == recomputed {
        writeln!(out, "reaggregate\tmatch").map_err(io)?;
        Ok(())
    } else {
        Err(CliError::Other(format!(
            "aggregates recomputed from {} differ from the stored summary",
            cfg.out.join(report::SCORES_FILE).display()
        )))
    }
}

fn sweep_dir(out: &Path, alpha: f64) -> PathBuf {
    out.join(format!("alpha-{alpha}"))
}

fn cmd_sweep(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("no grid given (--grid or `grid` in the config file)".into()))?;
    let harness = build_harness(cfg)?;
    let bundles = load_dataset(cfg)?;
    let reports = harness.sweep_alpha(&bundles, &cfg.settings, grid)?;
    for (alpha, r) in &reports {
        report::write_report(&sweep_dir(&cfg.out, *alpha), r)?;
    }
    let table = sweep_table(&reports);
    report::write_file(&cfg.out.join(SWEEP_FILE), &table)?;
    out.write_all(table.as_bytes()).map_err(io)?;
    reports.iter().try_for_each(|(_, r)| check_failures(r, cfg))
}

#[derive(Serialize)]
struct ScoreOutput {
    backend: String,
    tokens: usize,
    #[serde(with = "real")]
    log_likelihood: f64,
    #[serde(with = "real")]
    perplexity: f64,
}

fn cmd_score(cfg: &RunConfig, which: &str, prefix: &str, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let backends = build_backends(cfg)?;
    let lm = if which == "compression" {
        backends.compression
    } else {
        backends.target
    };
    let tok = WhitespaceTokenizer::new(Arc::new(lm.vocabulary().clone()));
    let encode = |s: &str| tok.encode(s).map_err(|e| CliError::Config(e.to_string()));
    let (prefix_ids, ids) = (encode(prefix)?, encode(text)?);
    let s = score_sequence(lm.as_ref(), &prefix_ids, &ids).map_err(|e| CliError::Other(e.to_string()))?;
    let line = ScoreOutput {
        backend: lm.descriptor().name.clone(),
        tokens: ids.len(),
        log_likelihood: s.log_likelihood,
        perplexity: s.perplexity,
    };
    writeln!(out, "{}", serde_json::to_string(&line).expect("serializes")).map_err(io)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
}

pub fn format_table(a: &Aggregates) -> String {
    let mut s = format!("{:<8}{:>6}{:>9}{:>9}{:>9}{:>10}\n", "subset", "n", "Acc", "F1", "CR", "PPL");
    let row = |name: &str, g: &Aggregate| {
        format!(
            "{name:<8}{:>6}{:>9}{:>9}{:>9}{:>10}\n",
            g.count,
            pct(g.acc),
            pct(g.f1),
            num(g.cr),
            num(g.ppl)
        )
    };
    s.push_str(&row("all", &a.overall));
    s.push_str(&row("Hits=0", &a.hits0));
    s.push_str(&row("Hits=1", &a.hits1));
    s
}

fn write_table(out: &mut dyn Write, a: &Aggregates) -> Result<(), CliError> {
    out.write_all(format_table(a).as_bytes()).map_err(io)
}
