//! Next-token distribution providers.
//!
//! Every provider implements [`LanguageModel`]. The decoder only ever talks to
//! `dyn LanguageModel`, so toy tables, remote servers and anything else can be
//! mixed freely as long as they share a vocabulary.

pub mod registry;
pub mod remote;
pub mod server;
pub mod toy;
pub mod wire;

use std::sync::Arc;

use thiserror::Error;

use crate::logprobs::{LogProbError, TokenLogProbs};
use crate::vocab::{Fingerprint, TokenId, Vocabulary};

pub use registry::{BackendFactory, BackendRegistry, BackendSpec};
pub use remote::{RemoteLM, RemoteMode};
pub use server::LogitServer;
pub use toy::ToyTableLM;

#[derive(Debug, Clone)]
pub struct BackendDescriptor {
    pub name: String,
    pub vocabulary: Arc<Vocabulary>,
    pub max_context: usize,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, vocabulary: Arc<Vocabulary>, max_context: usize) -> Self {
        assert!(max_context >= 1, "max_context must be at least 1");
        Self {
            name: name.into(),
            vocabulary,
            max_context,
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.vocabulary.fingerprint()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("context of {len} tokens exceeds max_context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownToken { id: TokenId, size: usize },
    #[error("vocabulary fingerprint mismatch: client {client}, server {}", server.map_or_else(|| "unknown".to_string(), |f| f.to_hex()))]
    FingerprintMismatch {
        client: Fingerprint,
        server: Option<Fingerprint>,
    },
    #[error("transport failure ({}): {message}", if *retryable { "retryable" } else { "fatal" })]
    Transport { message: String, retryable: bool },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("invalid distribution: {0}")]
    Distribution(#[from] LogProbError),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { retryable: true, .. })
    }
}

pub trait LanguageModel: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Distribution over the next token given the full context.
    fn next_token_distribution(&self, context: &[TokenId]) -> Result<TokenLogProbs, BackendError>;

    fn vocabulary(&self) -> &Vocabulary {
        &self.descriptor().vocabulary
    }
}

/// Precondition check shared by all backends.
pub fn check_context(descriptor: &BackendDescriptor, context: &[TokenId]) -> Result<(), BackendError> {
    if context.len() > descriptor.max_context {
        return Err(BackendError::ContextOverflow {
            len: context.len(),
            max: descriptor.max_context,
        });
    }
    let size = descriptor.vocabulary.len();
    if let Some(&id) = context.iter().find(|&&id| id as usize >= size) {
        return Err(BackendError::UnknownToken { id, size });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compatibility {
    Compatible,
    Incompatible { left: Fingerprint, right: Fingerprint },
}

impl Compatibility {
    pub fn is_compatible(self) -> bool {
        self == Compatibility::Compatible
    }
}

/// Two backends can be ensembled iff their vocabulary fingerprints agree.
pub fn check_compatibility(a: &BackendDescriptor, b: &BackendDescriptor) -> Compatibility {
    let (left, right) = (a.fingerprint(), b.fingerprint());
    if left == right {
        Compatibility::Compatible
    } else {
        Compatibility::Incompatible { left, right }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(tokens: &[&str], eos: TokenId) -> BackendDescriptor {
        let v = Vocabulary::new(tokens.iter().map(|s| s.to_string()).collect(), eos).unwrap();
        BackendDescriptor::new("t", Arc::new(v), 8)
    }

    #[test]
    fn compatibility_verdicts() {
        let a = desc(&["a", "b", "</s>"], 2);
        assert!(check_compatibility(&a, &desc(&["a", "b", "</s>"], 2)).is_compatible());
        let other = desc(&["a", "c", "</s>"], 2);
        assert_eq!(
            check_compatibility(&a, &other),
            Compatibility::Incompatible {
                left: a.fingerprint(),
                right: other.fingerprint()
            }
        );
        assert!(!check_compatibility(&a, &desc(&["a", "b", "</s>"], 0)).is_compatible());
    }

    #[test]
    fn context_checks() {
        let d = desc(&["a", "b", "</s>"], 2);
        assert!(check_context(&d, &[0, 1, 2]).is_ok());
        assert_eq!(
            check_context(&d, &[0; 9]),
            Err(BackendError::ContextOverflow { len: 9, max: 8 })
        );
        assert_eq!(
            check_context(&d, &[0, 3]),
            Err(BackendError::UnknownToken { id: 3, size: 3 })
        );
    }

    #[test]
    fn retryability() {
        let e = BackendError::Transport {
            message: "refused".into(),
            retryable: true,
        };
        assert!(e.is_retryable());
        assert!(!BackendError::Protocol("x".into()).is_retryable());
    }
}
