//! Logit-serving wire protocol.
//!
//! One JSON object per line in each direction over a TCP stream. A connection
//! may carry any number of request/response pairs.
//!
//! ```text
//! -> {"fingerprint":"89ab...","context":[4,17,2],"mode":"full","k":0}
//! <- {"values":[-0.51,-1.2,"-inf",...]}
//! -> {"fingerprint":"89ab...","context":[4,17,2],"mode":"topk","k":2}
//! <- {"entries":[[17,-0.1],[4,-2.5]],"tail_mass":0.013}
//! <- {"error":"fingerprint_mismatch","message":"..."}
//! ```
//!
//! Reals are JSON numbers; `-inf` is written as the string `"-inf"`.

use serde::{Deserialize, Serialize};

use crate::logprobs::{normalize_logits, real, TokenLogProbs};
use crate::vocab::TokenId;

use super::BackendError;

pub mod codes {
    pub const FINGERPRINT_MISMATCH: &str = "fingerprint_mismatch";
    pub const CONTEXT_OVERFLOW: &str = "context_overflow";
    pub const UNKNOWN_TOKEN: &str = "unknown_token";
    pub const BAD_REQUEST: &str = "bad_request";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireMode {
    Full,
    Topk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub fingerprint: String,
    pub context: Vec<TokenId>,
    pub mode: WireMode,
    #[serde(default)]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEntry(pub TokenId, #[serde(with = "real")] pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Full {
        #[serde(with = "real::vec")]
        values: Vec<f64>,
    },
    TopK {
        entries: Vec<TopEntry>,
        #[serde(with = "real")]
        tail_mass: f64,
    },
    Error {
        error: String,
        message: String,
    },
}

impl Response {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Response::Error {
            error: code.to_string(),
            message: message.into(),
        }
    }

    /// Top-`k` entries of a distribution, highest first, lowest token id on ties.
    pub fn top_k(dist: &TokenLogProbs, k: usize) -> Self {
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| {
            dist.values()[b]
                .partial_cmp(&dist.values()[a])
                .expect("log-probs are never NaN")
                .then(a.cmp(&b))
        });
        let k = k.min(dist.len());
        let entries: Vec<TopEntry> = order[..k]
            .iter()
            .map(|&i| TopEntry(i as TokenId, dist.values()[i]))
            .collect();
        let kept: f64 = entries.iter().map(|e| e.1.exp()).sum();
        Response::TopK {
            entries,
            tail_mass: (1.0 - kept).max(0.0),
        }
    }

    /// Turns a response into a normalized distribution over `vocab_size` tokens.
    ///
    /// In top-K mode each missing token receives `ln(tail_mass / (|V| - K))`.
    pub fn into_distribution(self, vocab_size: usize) -> Result<TokenLogProbs, BackendError> {
        match self {
            Response::Full { values } => {
                if values.len() != vocab_size {
                    return Err(BackendError::Protocol(format!(
                        "{} values for vocabulary of size {vocab_size}",
                        values.len()
                    )));
                }
                Ok(normalize_logits(&values, vocab_size)?)
            }
            Response::TopK { entries, tail_mass } => {
                if !(0.0..=1.0).contains(&tail_mass) {
                    return Err(BackendError::Protocol(format!("tail_mass {tail_mass} outside [0, 1]")));
                }
                if entries.len() > vocab_size {
                    return Err(BackendError::Protocol("more entries than vocabulary".into()));
                }
                let missing = vocab_size - entries.len();
                let fill = if missing == 0 {
                    f64::NEG_INFINITY
                } else {
                    (tail_mass / missing as f64).ln()
                };
                let mut values = vec![f64::NAN; vocab_size];
                for TopEntry(id, lp) in entries {
                    let slot = values
                        .get_mut(id as usize)
                        .ok_or_else(|| BackendError::Protocol(format!("entry for unknown token {id}")))?;
                    if !slot.is_nan() {
                        return Err(BackendError::Protocol(format!("duplicate entry for token {id}")));
                    }
                    *slot = lp;
                }
                for v in values.iter_mut().filter(|v| v.is_nan()) {
                    *v = fill;
                }
                Ok(normalize_logits(&values, vocab_size)?)
            }
            Response::Error { error, message } => Err(BackendError::Remote { code: error, message }),
        }
    }
}
