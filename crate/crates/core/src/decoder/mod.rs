//! Lockstep two-model greedy decoding.
//!
//! At every step the compression model sees `instruction + question + documents
//! + emitted`, the target model sees `instruction + question + emitted`, and the
//! next token is
//!
//! ```text
//! argmax_v  alpha * log P_target(v) + (1 - alpha) * log P_compression(v)
//! ```
//!
//! with the lowest token id winning ties. A zero weight contributes exactly 0
//! even against `-inf`, so `alpha = 0` and `alpha = 1` reduce to plain greedy
//! decoding of one model.

pub mod strategy;

use thiserror::Error;

use crate::backend::{check_compatibility, BackendError, Compatibility, LanguageModel};
use crate::logprobs::TokenLogProbs;
use crate::types::{
    validate_alpha, CompressionTrace, ConfigError, DecodeConfig, SourceTag, StepDistributions,
    StepRecord, Termination,
};
use crate::vocab::{Fingerprint, TokenId};

pub use strategy::{CompressionStrategy, StrategyRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Target,
    Compression,
}

impl std::fmt::Display for ModelRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelRole::Target => "target",
            ModelRole::Compression => "compression",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("distributions cover {target} and {compression} tokens")]
    VocabSizeMismatch { target: usize, compression: usize },
    #[error("backends do not share a vocabulary (compression {compression}, target {target})")]
    Incompatible {
        compression: Fingerprint,
        target: Fingerprint,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{role} backend: {source}")]
    Backend { role: ModelRole, source: BackendError },
}

/// Result of one ensemble step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice {
    pub token: TokenId,
    pub combined_score: f64,
    pub source: SourceTag,
    pub target_argmax: TokenId,
    pub compression_argmax: TokenId,
}

/// `weight * logprob`, except that a zero weight yields exactly zero.
#[inline]
pub fn weighted(weight: f64, logprob: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * logprob
    }
}

#[inline]
pub fn combine(alpha: f64, target: f64, compression: f64) -> f64 {
    weighted(alpha, target) + weighted(1.0 - alpha, compression)
}

pub fn ensemble_step(
    target: &TokenLogProbs,
    compression: &TokenLogProbs,
    alpha: f64,
) -> Result<StepChoice, DecodeError> {
    ensemble_step_scores(target.values(), compression.values(), alpha)
}

/// [`ensemble_step`] over raw score vectors, which need not be normalized.
pub fn ensemble_step_scores(t: &[f64], c: &[f64], alpha: f64) -> Result<StepChoice, DecodeError> {
    validate_alpha(alpha)?;
    if t.len() != c.len() || t.is_empty() {
        return Err(DecodeError::VocabSizeMismatch {
            target: t.len(),
            compression: c.len(),
        });
    }
    let (mut best, mut best_score) = (0usize, f64::NEG_INFINITY);
    let (mut t_best, mut c_best) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut t_arg, mut c_arg) = (0usize, 0usize);
    for i in 0..t.len() {
        let s = combine(alpha, t[i], c[i]);
        // Strict `>` keeps the lowest index on ties; index 0 seeds the `-inf` case.
        if i == 0 || s > best_score {
            best = i;
            best_score = s;
        }
        if i == 0 || t[i] > t_best {
            t_arg = i;
            t_best = t[i];
        }
        if i == 0 || c[i] > c_best {
            c_arg = i;
            c_best = c[i];
        }
    }
    let token = best as TokenId;
    let (target_argmax, compression_argmax) = (t_arg as TokenId, c_arg as TokenId);
    Ok(StepChoice {
        token,
        combined_score: best_score,
        source: SourceTag::classify(token, target_argmax, compression_argmax),
        target_argmax,
        compression_argmax,
    })
}

/// The two growing contexts of a decode session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualContext {
    compression: Vec<TokenId>,
    generation: Vec<TokenId>,
    emitted: usize,
}

impl DualContext {
    pub fn new(compression_prompt: Vec<TokenId>, generation_prompt: Vec<TokenId>) -> Self {
        Self {
            compression: compression_prompt,
            generation: generation_prompt,
            emitted: 0,
        }
    }

    pub fn compression_context(&self) -> &[TokenId] {
        &self.compression
    }

    pub fn generation_context(&self) -> &[TokenId] {
        &self.generation
    }

    pub fn emitted(&self) -> &[TokenId] {
        &self.generation[self.generation.len() - self.emitted..]
    }

    pub fn push(&mut self, token: TokenId) {
        self.compression.push(token);
        self.generation.push(token);
        self.emitted += 1;
    }
}

/// A decode that stopped on an error, with everything emitted before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("decode failed after {} tokens: {error}", tokens.len())]
pub struct DecodeFailure {
    pub tokens: Vec<TokenId>,
    pub per_step: Vec<StepRecord>,
    pub error: DecodeError,
}

impl DecodeFailure {
    fn bare(error: DecodeError) -> Self {
        Self {
            tokens: Vec::new(),
            per_step: Vec::new(),
            error,
        }
    }
}

fn query_both(
    compression_lm: &dyn LanguageModel,
    target_lm: &dyn LanguageModel,
    ctx: &DualContext,
) -> Result<(TokenLogProbs, TokenLogProbs), DecodeError> {
    let (target, compression) = rayon::join(
        || target_lm.next_token_distribution(ctx.generation_context()),
        || compression_lm.next_token_distribution(ctx.compression_context()),
    );
    let target = target.map_err(|source| DecodeError::Backend {
        role: ModelRole::Target,
        source,
    })?;
    let compression = compression.map_err(|source| DecodeError::Backend {
        role: ModelRole::Compression,
        source,
    })?;
    Ok((target, compression))
}

/// Runs ensemble decoding from the two rendered prompts.
pub fn decode(
    compression_lm: &dyn LanguageModel,
    target_lm: &dyn LanguageModel,
    compression_prompt: Vec<TokenId>,
    generation_prompt: Vec<TokenId>,
    config: &DecodeConfig,
) -> Result<CompressionTrace, DecodeFailure> {
    config
        .validate()
        .map_err(|e| DecodeFailure::bare(e.into()))?;
    if let Compatibility::Incompatible { left, right } =
        check_compatibility(compression_lm.descriptor(), target_lm.descriptor())
    {
        return Err(DecodeFailure::bare(DecodeError::Incompatible {
            compression: left,
            target: right,
        }));
    }
    let eos = target_lm.vocabulary().eos_id();
    let mut ctx = DualContext::new(compression_prompt, generation_prompt);
    let mut per_step = Vec::new();
    let mut distributions = Vec::new();
    let mut stop_step = None;
    let mut terminated_by = Termination::LengthLimit;

    while per_step.len() < config.max_new_tokens {
        let step = query_both(compression_lm, target_lm, &ctx).and_then(|(t, c)| {
            let choice = ensemble_step(&t, &c, config.alpha)?;
            Ok((t, c, choice))
        });
        let (target, compression, choice) = match step {
            Ok(v) => v,
            Err(error) => {
                return Err(DecodeFailure {
                    tokens: ctx.emitted().to_vec(),
                    per_step,
                    error,
                })
            }
        };
        let record = StepRecord {
            token: choice.token,
            target_logprob: target.get(choice.token),
            compression_logprob: compression.get(choice.token),
            combined_score: choice.combined_score,
            source: choice.source,
            target_argmax: choice.target_argmax,
            compression_argmax: choice.compression_argmax,
        };
        if config.record_distributions {
            distributions.push(StepDistributions::new(&target, &compression));
        }
        if config.stop_on_eos && choice.token == eos {
            stop_step = Some(record);
            terminated_by = Termination::Eos;
            break;
        }
        ctx.push(choice.token);
        per_step.push(record);
    }

    Ok(CompressionTrace {
        tokens: ctx.emitted().to_vec(),
        per_step,
        terminated_by,
        stop_step,
        distributions,
    })
}

/// Plain greedy decoding of a single model. The eos token is not returned.
pub fn greedy_decode(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    max_new_tokens: usize,
    stop_on_eos: bool,
) -> Result<Vec<TokenId>, BackendError> {
    let eos = lm.vocabulary().eos_id();
    let mut context = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new_tokens {
        let token = lm.next_token_distribution(&context)?.argmax();
        if stop_on_eos && token == eos {
            break;
        }
        context.push(token);
        out.push(token);
    }
    Ok(out)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("cannot score an empty sequence")]
    EmptySequence,
    #[error("prefix + sequence is {len} tokens, backend allows {max}")]
    Overflow { len: usize, max: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    pub log_likelihood: f64,
    pub perplexity: f64,
}

/// Log-likelihood and perplexity of `sequence` conditioned on `prefix`.
pub fn score_sequence(
    lm: &dyn LanguageModel,
    prefix: &[TokenId],
    sequence: &[TokenId],
) -> Result<SequenceScore, ScoreError> {
    if sequence.is_empty() {
        return Err(ScoreError::EmptySequence);
    }
    let total_len = prefix.len() + sequence.len();
    let max = lm.descriptor().max_context;
    if total_len > max {
        return Err(ScoreError::Overflow { len: total_len, max });
    }
    let mut context = Vec::with_capacity(total_len);
    context.extend_from_slice(prefix);
    let mut log_likelihood = 0.0;
    for &tok in sequence {
        let dist = lm.next_token_distribution(&context)?;
        let size = dist.len();
        if tok as usize >= size {
            return Err(BackendError::UnknownToken { id: tok, size }.into());
        }
        log_likelihood += dist.get(tok);
        context.push(tok);
    }
    Ok(SequenceScore {
        log_likelihood,
        perplexity: (-log_likelihood / sequence.len() as f64).exp(),
    })
}
