//! Whitespace tokenizer over a shared vocabulary.

use std::sync::Arc;

use thiserror::Error;

use crate::vocab::{TokenId, Vocabulary};

pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("word {0:?} is not in the vocabulary and there is no {UNK_TOKEN} token")]
    OutOfVocabulary(String),
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(TokenId),
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizeError>;

    fn decode(&self, tokens: &[TokenId]) -> Result<String, TokenizeError>;

    fn count(&self, text: &str) -> Result<usize, TokenizeError> {
        self.encode(text).map(|t| t.len())
    }
}

/// Splits on Unicode whitespace; unknown words map to `<unk>` when the vocabulary has it.
#[derive(Debug, Clone)]
pub struct WhitespaceTokenizer {
    vocab: Arc<Vocabulary>,
    unk: Option<TokenId>,
}

impl WhitespaceTokenizer {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        let unk = vocab.id_of(UNK_TOKEN);
        Self { vocab, unk }
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizeError> {
        text.split_whitespace()
            .map(|w| {
                self.vocab
                    .id_of(w)
                    .or(self.unk)
                    .ok_or_else(|| TokenizeError::OutOfVocabulary(w.to_string()))
            })
            .collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, TokenizeError> {
        let words = tokens
            .iter()
            .map(|&t| self.vocab.token(t).ok_or(TokenizeError::UnknownId(t)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(words.join(" "))
    }

    fn count(&self, text: &str) -> Result<usize, TokenizeError> {
        Ok(text.split_whitespace().count())
    }
}
