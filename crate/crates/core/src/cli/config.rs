//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! dataset = "nq.jsonl"
//! out = "runs/nq"
//! alpha = 0.5
//! grid = [0.0, 0.25, 0.5, 0.75, 1.0]
//! demonstrations = "nq"
//! eval_layout = "question-first"
//!
//! [backends.compression]
//! kind = "toy"
//! path = "compressor.lm"
//!
//! [backends.target]
//! kind = "toy"
//! path = "target.lm"
//! ```
//!
//! Relative paths in the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::backend::BackendSpec;
use crate::harness::pipeline::DEFAULT_ANSWER_MAX_TOKENS;
use crate::harness::{validate_grid, EvalLayout, PipelineSettings};
use crate::types::{validate_alpha, DecodeConfig, DEFAULT_ALPHA, DEFAULT_MAX_NEW_TOKENS};

pub const COMPRESSION_ENDPOINT_ENV: &str = "EVCOMP_COMPRESSION_ENDPOINT";
pub const TARGET_ENDPOINT_ENV: &str = "EVCOMP_TARGET_ENDPOINT";

pub const DEFAULT_OUT_DIR: &str = "evcomp-out";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsSection {
    pub compression: BackendSpec,
    pub target: BackendSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub demonstrations: Option<String>,
    pub eval_layout: Option<EvalLayout>,
    pub strategy: Option<String>,
    pub alpha: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub max_new_tokens: Option<usize>,
    pub answer_max_tokens: Option<usize>,
    pub metric_mode: Option<String>,
    pub strict: Option<bool>,
    /// Largest tolerated fraction of failed examples before exit code 4.
    pub max_failure_fraction: Option<f64>,
    pub record_distributions: Option<bool>,
    pub backends: Option<BackendsSection>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Values given on the command line; each one beats the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub max_new_tokens: Option<usize>,
    pub metric_mode: Option<String>,
    pub strategy: Option<String>,
    pub strict: bool,
    pub compression_endpoint: Option<String>,
    pub target_endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub templates: Option<PathBuf>,
    pub eval_layout: Option<EvalLayout>,
    pub settings: PipelineSettings,
    pub grid: Option<Vec<f64>>,
    pub strict: bool,
    pub max_failure_fraction: f64,
    pub backends: Option<BackendsSection>,
    /// Directory that relative backend paths resolve against.
    pub base_dir: PathBuf,
}

fn rebase(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn resolve(file: FileConfig, base_dir: &Path, o: Overrides) -> Result<Self, String> {
        let alpha = validate_alpha(o.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA)).map_err(|e| e.to_string())?;
        let max_new_tokens = o.max_new_tokens.or(file.max_new_tokens).unwrap_or(DEFAULT_MAX_NEW_TOKENS);
        let answer_max_tokens = file.answer_max_tokens.unwrap_or(DEFAULT_ANSWER_MAX_TOKENS);
        if answer_max_tokens == 0 {
            return Err("answer_max_tokens must be at least 1".into());
        }
        let max_failure_fraction = file.max_failure_fraction.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&max_failure_fraction) {
            return Err(format!("max_failure_fraction must lie in [0, 1], got {max_failure_fraction}"));
        }
        let grid = o.grid.or(file.grid);
        if let Some(g) = &grid {
            validate_grid(g).map_err(|e| e.to_string())?;
        }
        let decode = DecodeConfig {
            alpha,
            max_new_tokens,
            record_distributions: file.record_distributions.unwrap_or(false),
            ..DecodeConfig::default()
        };
        decode.validate().map_err(|e| e.to_string())?;

        let mut backends = file.backends;
        if let Some(b) = backends.as_mut() {
            if let Some(e) = o.compression_endpoint.filter(|e| !e.is_empty()) {
                b.compression.endpoint = Some(e);
            }
            if let Some(e) = o.target_endpoint.filter(|e| !e.is_empty()) {
                b.target.endpoint = Some(e);
            }
        }

        Ok(Self {
            dataset: o.dataset.or_else(|| file.dataset.map(|p| rebase(base_dir, p))),
            out: o
                .out
                .or_else(|| file.out.map(|p| rebase(base_dir, p)))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            templates: file.templates.map(|p| rebase(base_dir, p)),
            eval_layout: file.eval_layout,
            settings: PipelineSettings {
                strategy: o.strategy.or(file.strategy).unwrap_or_else(|| "ensemble".into()),
                decode,
                answer_max_tokens,
                metric_mode: o.metric_mode.or(file.metric_mode).unwrap_or_else(|| "containment".into()),
                demonstrations: file.demonstrations,
            },
            grid,
            strict: o.strict || file.strict.unwrap_or(false),
            max_failure_fraction,
            backends,
            base_dir: base_dir.to_path_buf(),
        })
    }
}
