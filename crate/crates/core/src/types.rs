//! Domain records shared by the decoder, the harness and the CLI.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logprobs::{argmax, real, TokenLogProbs};
use crate::vocab::TokenId;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("max_new_tokens must be at least 1")]
    ZeroMaxNewTokens,
}

pub fn validate_alpha(alpha: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(alpha)
    } else {
        Err(ConfigError::AlphaOutOfRange(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestTokenIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub alpha: f64,
    pub max_new_tokens: usize,
    pub stop_on_eos: bool,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Keep both full distributions for every step in the trace.
    #[serde(default)]
    pub record_distributions: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            stop_on_eos: true,
            tie_break: TieBreak::LowestTokenIndex,
            record_distributions: false,
        }
    }
}

impl DecodeConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_alpha(self.alpha)?;
        if self.max_new_tokens == 0 {
            return Err(ConfigError::ZeroMaxNewTokens);
        }
        Ok(())
    }
}

/// One QA example with its pre-retrieved evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub id: String,
    #[serde(rename = "question")]
    pub query: String,
    pub documents: Vec<String>,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
}

/// Which model(s) rank the emitted token first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    BothArgmax,
    TargetArgmax,
    CompressionArgmax,
    Neither,
}

impl SourceTag {
    pub fn classify(chosen: TokenId, target_argmax: TokenId, compression_argmax: TokenId) -> Self {
        match (chosen == target_argmax, chosen == compression_argmax) {
            (true, true) => SourceTag::BothArgmax,
            (true, false) => SourceTag::TargetArgmax,
            (false, true) => SourceTag::CompressionArgmax,
            (false, false) => SourceTag::Neither,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::BothArgmax => "both-argmax",
            SourceTag::TargetArgmax => "target-argmax",
            SourceTag::CompressionArgmax => "compression-argmax",
            SourceTag::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Eos,
    LengthLimit,
}

/// Provenance of one decoded token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
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
}

impl StepRecord {
    pub fn tag_is_consistent(&self) -> bool {
        SourceTag::classify(self.token, self.target_argmax, self.compression_argmax) == self.source
    }
}

/// Full distributions behind one step, kept only when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistributions {
    #[serde(with = "real::vec")]
    pub target: Vec<f64>,
    #[serde(with = "real::vec")]
    pub compression: Vec<f64>,
}

impl StepDistributions {
    pub fn new(target: &TokenLogProbs, compression: &TokenLogProbs) -> Self {
        Self {
            target: target.values().to_vec(),
            compression: compression.values().to_vec(),
        }
    }
}

/// Output of an ensemble decode: the compressed evidence and where each token came from.
///
/// `tokens` never includes the end-of-sequence token; when decoding stops on
/// eos, the step that selected it is kept in `stop_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionTrace {
    pub tokens: Vec<TokenId>,
    pub per_step: Vec<StepRecord>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_step: Option<StepRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distributions: Vec<StepDistributions>,
}

impl CompressionTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Every step record in decode order, including the stopping step.
    pub fn all_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.per_step.iter().chain(self.stop_step.iter())
    }

    /// Checks the structural invariants, and when distributions were kept,
    /// that the stored argmaxes and tags match them.
    pub fn verify(&self) -> Result<(), String> {
        if self.per_step.len() != self.tokens.len() {
            return Err(format!(
                "{} step records for {} tokens",
                self.per_step.len(),
                self.tokens.len()
            ));
        }
        for (i, (step, &tok)) in self.per_step.iter().zip(&self.tokens).enumerate() {
            if step.token != tok {
                return Err(format!("step {i}: record token {} != {}", step.token, tok));
            }
        }
        for (i, step) in self.all_steps().enumerate() {
            if !step.tag_is_consistent() {
                return Err(format!("step {i}: inconsistent source tag"));
            }
        }
        if !self.distributions.is_empty() {
            let steps = self.per_step.len() + usize::from(self.stop_step.is_some());
            if self.distributions.len() != steps {
                return Err(format!(
                    "{} distributions for {} steps",
                    self.distributions.len(),
                    steps
                ));
            }
            for (i, (step, dists)) in self.all_steps().zip(&self.distributions).enumerate() {
                let ta = argmax(&dists.target).ok_or("empty target distribution")?;
                let ca = argmax(&dists.compression).ok_or("empty compression distribution")?;
                if ta != step.target_argmax || ca != step.compression_argmax {
                    return Err(format!("step {i}: stored argmax disagrees with distributions"));
                }
            }
        }
        Ok(())
    }
}
