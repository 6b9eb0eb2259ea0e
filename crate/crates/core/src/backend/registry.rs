//! Backends are constructed by name from a config entry.
//!
//! ```toml
//! [backends.compression]
//! kind = "toy"
//! path = "compressor.lm"
//!
//! [backends.target]
//! kind = "remote"
//! endpoint = "127.0.0.1:7070"
//! vocab = "shared.vocab"
//! max_context = 8192
//! mode = "topk"
//! k = 64
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::remote::{RemoteLM, RemoteMode};
use super::toy::{ToyLmError, ToyTableLM};
use super::LanguageModel;
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_context: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("unknown backend kind {kind:?} (known: {known})")]
    UnknownKind { kind: String, known: String },
    #[error("backend kind {kind:?} requires field `{field}`")]
    MissingField { kind: String, field: &'static str },
    #[error("invalid value for `{field}`: {message}")]
    InvalidField { field: &'static str, message: String },
    #[error(transparent)]
    Toy(#[from] ToyLmError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

pub trait BackendFactory: Send + Sync {
    fn kind(&self) -> &'static str;

    /// `base_dir` resolves relative paths in `spec`.
    fn build(&self, spec: &BackendSpec, base_dir: &Path) -> Result<Arc<dyn LanguageModel>, BuildError>;
}

fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

pub struct ToyFactory;

impl BackendFactory for ToyFactory {
    fn kind(&self) -> &'static str {
        "toy"
    }

    fn build(&self, spec: &BackendSpec, base_dir: &Path) -> Result<Arc<dyn LanguageModel>, BuildError> {
        let path = spec.path.as_ref().ok_or(BuildError::MissingField {
            kind: "toy".into(),
            field: "path",
        })?;
        let path = resolve(base_dir, path);
        let mut lm = ToyTableLM::load(&path)?.with_name(format!("toy:{}", path.display()));
        if let Some(max) = spec.max_context {
            if max == 0 {
                return Err(BuildError::InvalidField {
                    field: "max_context",
                    message: "must be at least 1".into(),
                });
            }
            lm = lm.with_max_context(max);
        }
        Ok(Arc::new(lm))
    }
}

pub struct RemoteFactory;

impl BackendFactory for RemoteFactory {
    fn kind(&self) -> &'static str {
        "remote"
    }

    fn build(&self, spec: &BackendSpec, base_dir: &Path) -> Result<Arc<dyn LanguageModel>, BuildError> {
        let missing = |field| BuildError::MissingField {
            kind: "remote".into(),
            field,
        };
        let endpoint = spec.endpoint.clone().ok_or_else(|| missing("endpoint"))?;
        let vocab_path = spec.vocab.as_ref().ok_or_else(|| missing("vocab"))?;
        let vocab = Arc::new(Vocabulary::load(&resolve(base_dir, vocab_path))?);
        let max_context = spec.max_context.unwrap_or(4096);
        if max_context == 0 {
            return Err(BuildError::InvalidField {
                field: "max_context",
                message: "must be at least 1".into(),
            });
        }
        let mode = match spec.mode.as_deref().unwrap_or("full") {
            "full" => RemoteMode::Full,
            "topk" => match spec.k {
                Some(k) if k >= 1 => RemoteMode::TopK(k),
                _ => {
                    return Err(BuildError::InvalidField {
                        field: "k",
                        message: "topk mode requires k >= 1".into(),
                    })
                }
            },
            other => {
                return Err(BuildError::InvalidField {
                    field: "mode",
                    message: format!("expected \"full\" or \"topk\", got {other:?}"),
                })
            }
        };
        let mut lm = RemoteLM::new(endpoint, vocab, max_context).with_mode(mode);
        if let Some(secs) = spec.timeout_secs {
            lm = lm.with_timeout(Duration::from_secs(secs));
        }
        Ok(Arc::new(lm))
    }
}

pub struct BackendRegistry {
    factories: BTreeMap<&'static str, Box<dyn BackendFactory>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ToyFactory));
        r.register(Box::new(RemoteFactory));
        r
    }

    /// Replaces any factory already registered under the same kind.
    pub fn register(&mut self, factory: Box<dyn BackendFactory>) {
        self.factories.insert(factory.kind(), factory);
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, spec: &BackendSpec, base_dir: &Path) -> Result<Arc<dyn LanguageModel>, BuildError> {
        let factory = self
            .factories
            .get(spec.kind.as_str())
            .ok_or_else(|| BuildError::UnknownKind {
                kind: spec.kind.clone(),
                known: self.kinds().join(", "),
            })?;
        factory.build(spec, base_dir)
    }
}
