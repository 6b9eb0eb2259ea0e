//! QA and compression metrics.
//!
//! Answers are compared after open-domain-QA normalization: lowercase, strip
//! ASCII punctuation, drop the articles `a`, `an`, `the`, collapse whitespace.

pub mod matcher;

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matcher::{AnswerMatcher, MatcherRegistry};

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").unwrap());

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Harmonic mean of precision and recall over two token multisets.
pub fn f1_tokens(prediction: &[&str], gold: &[&str]) -> f64 {
    if prediction.is_empty() || gold.is_empty() {
        return if prediction.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in prediction {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / prediction.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-level F1 against any gold answer.
pub fn token_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let pred = normalize_answer(prediction);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    golds
        .iter()
        .map(|g| {
            let g = normalize_answer(g.as_ref());
            f1_tokens(&pred_tokens, &g.split_whitespace().collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

/// 1 when some normalized gold occurs inside the normalized prediction.
pub fn accuracy<S: AsRef<str>>(prediction: &str, golds: &[S]) -> u8 {
    let pred = normalize_answer(prediction);
    u8::from(golds.iter().any(|g| pred.contains(&normalize_answer(g.as_ref()))))
}

/// 1 when the normalized prediction equals some normalized gold.
pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> u8 {
    let pred = normalize_answer(prediction);
    u8::from(golds.iter().any(|g| pred == normalize_answer(g.as_ref())))
}

/// 1 when some gold answer appears in the retrieved documents.
pub fn hits<D: AsRef<str>, S: AsRef<str>>(documents: &[D], golds: &[S]) -> u8 {
    let joined = documents.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    let evidence = normalize_answer(&joined);
    u8::from(golds.iter().any(|g| evidence.contains(&normalize_answer(g.as_ref()))))
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("retrieved token count must be at least 1")]
    NoRetrievedTokens,
}

/// Retrieved tokens per compressed token; an empty compression counts as one token.
pub fn compression_rate(retrieved_tokens: usize, compressed_tokens: usize) -> Result<f64, MetricError> {
    if retrieved_tokens == 0 {
        return Err(MetricError::NoRetrievedTokens);
    }
    Ok(retrieved_tokens as f64 / compressed_tokens.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    /// Accuracy under the configured matcher.
    pub accuracy: u8,
    pub accuracy_containment: u8,
    pub accuracy_exact: u8,
    pub f1: f64,
    pub hits: u8,
    pub compression_rate: f64,
    /// `None` when the compressed evidence is empty.
    #[serde(with = "crate::logprobs::real::option")]
    pub evidence_perplexity: Option<f64>,
}
