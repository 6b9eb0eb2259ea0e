//! Table-driven language model of order at most two.
//!
//! Definition files are line oriented:
//!
//! ```text
//! # comment
//! @vocab the cat sat </s> <unk>
//! @eos </s>
//! @max_context 512
//! @fallback uniform
//! -> the:0.5, cat:0.5
//! the -> cat:0.9, sat:0.1
//! the cat -> sat:1
//! ```
//!
//! A rule line is `ctx-tokens -> token:prob, token:prob, ...`; the context has
//! zero, one or two tokens and each line's probabilities must sum to 1 within
//! 1e-9. Tokens a line does not mention get probability zero. Lookups use the
//! longest matching context suffix, then the `@fallback` distribution.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use super::{check_context, BackendDescriptor, BackendError, LanguageModel};
use crate::logprobs::{LogProbError, TokenLogProbs};
use crate::vocab::{TokenId, VocabError, Vocabulary};

pub const MAX_ORDER: usize = 2;
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;
const DEFAULT_MAX_CONTEXT: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ToyLmError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("context of length {0} exceeds the maximum order {MAX_ORDER}")]
    OrderTooHigh(usize),
    #[error("distribution has {actual} entries, vocabulary has {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("duplicate rule for context {0:?}")]
    DuplicateContext(Vec<TokenId>),
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(TokenId),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Distribution(#[from] LogProbError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub struct ToyTableLM {
    descriptor: BackendDescriptor,
    table: HashMap<Vec<TokenId>, TokenLogProbs>,
    fallback: TokenLogProbs,
}

impl ToyTableLM {
    /// A model whose every lookup returns `fallback` until rules are added.
    pub fn new(vocabulary: Arc<Vocabulary>, fallback: TokenLogProbs) -> Result<Self, ToyLmError> {
        if fallback.len() != vocabulary.len() {
            return Err(ToyLmError::SizeMismatch {
                expected: vocabulary.len(),
                actual: fallback.len(),
            });
        }
        Ok(Self {
            descriptor: BackendDescriptor::new("toy", vocabulary, DEFAULT_MAX_CONTEXT),
            table: HashMap::new(),
            fallback,
        })
    }

    pub fn uniform(vocabulary: Arc<Vocabulary>) -> Self {
        let fallback = TokenLogProbs::uniform(vocabulary.len());
        Self::new(vocabulary, fallback).expect("uniform fallback matches vocabulary")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.descriptor.name = name.into();
        self
    }

    pub fn with_max_context(mut self, max_context: usize) -> Self {
        assert!(max_context >= 1);
        self.descriptor.max_context = max_context;
        self
    }

    pub fn insert(&mut self, context: Vec<TokenId>, dist: TokenLogProbs) -> Result<(), ToyLmError> {
        if context.len() > MAX_ORDER {
            return Err(ToyLmError::OrderTooHigh(context.len()));
        }
        let size = self.descriptor.vocabulary.len();
        if dist.len() != size {
            return Err(ToyLmError::SizeMismatch {
                expected: size,
                actual: dist.len(),
            });
        }
        if let Some(&id) = context.iter().find(|&&id| id as usize >= size) {
            return Err(ToyLmError::UnknownToken(id));
        }
        if self.table.contains_key(&context) {
            return Err(ToyLmError::DuplicateContext(context));
        }
        self.table.insert(context, dist);
        Ok(())
    }

    pub fn fallback(&self) -> &TokenLogProbs {
        &self.fallback
    }

    pub fn rules(&self) -> impl Iterator<Item = (&[TokenId], &TokenLogProbs)> {
        self.table.iter().map(|(k, v)| (k.as_slice(), v))
    }

    /// Table lookup without context validation.
    pub fn lookup(&self, context: &[TokenId]) -> &TokenLogProbs {
        let longest = context.len().min(MAX_ORDER);
        (0..=longest)
            .rev()
            .find_map(|n| self.table.get(&context[context.len() - n..]))
            .unwrap_or(&self.fallback)
    }

    pub fn parse(text: &str) -> Result<Self, ToyLmError> {
        let mut vocab_tokens: Option<Vec<String>> = None;
        let mut eos: Option<String> = None;
        let mut max_context = DEFAULT_MAX_CONTEXT;
        let mut fallback_line: Option<(usize, String)> = None;
        let mut rules: Vec<(usize, String, String)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| ToyLmError::Parse {
                line: line_no,
                message,
            };
            if let Some(directive) = line.strip_prefix('@') {
                let (key, rest) = directive
                    .split_once(char::is_whitespace)
                    .map(|(k, r)| (k, r.trim()))
                    .unwrap_or((directive, ""));
                match key {
                    "vocab" => vocab_tokens = Some(rest.split_whitespace().map(str::to_string).collect()),
                    "eos" => eos = Some(rest.to_string()),
                    "max_context" => {
                        max_context = rest
                            .parse::<usize>()
                            .ok()
                            .filter(|&n| n >= 1)
                            .ok_or_else(|| perr(format!("invalid max_context {rest:?}")))?
                    }
                    "fallback" => fallback_line = Some((line_no, rest.to_string())),
                    other => return Err(perr(format!("unknown directive @{other}"))),
                }
                continue;
            }
            let (ctx, dist) = line
                .split_once("->")
                .ok_or_else(|| perr("expected `ctx -> token:prob, ...`".into()))?;
            rules.push((line_no, ctx.trim().to_string(), dist.trim().to_string()));
        }

        let tokens = vocab_tokens.ok_or(ToyLmError::Parse {
            line: 0,
            message: "missing @vocab directive".into(),
        })?;
        let eos = eos.ok_or(ToyLmError::Parse {
            line: 0,
            message: "missing @eos directive".into(),
        })?;
        let vocab = Arc::new(Vocabulary::with_eos_token(tokens, &eos)?);

        let fallback = match fallback_line {
            None => TokenLogProbs::uniform(vocab.len()),
            Some((_, ref s)) if s == "uniform" => TokenLogProbs::uniform(vocab.len()),
            Some((line, s)) => parse_distribution(&vocab, &s, line)?,
        };
        let mut lm = Self::new(vocab.clone(), fallback)?.with_max_context(max_context);
        for (line, ctx, dist) in rules {
            let context = ctx
                .split_whitespace()
                .map(|t| {
                    vocab.id_of(t).ok_or_else(|| ToyLmError::Parse {
                        line,
                        message: format!("unknown context token {t:?}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let dist = parse_distribution(&vocab, &dist, line)?;
            lm.insert(context, dist).map_err(|e| ToyLmError::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(lm)
    }

    pub fn load(path: &Path) -> Result<Self, ToyLmError> {
        let text = std::fs::read_to_string(path).map_err(|e| ToyLmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Renders the model in the definition-file format. Rules are sorted by
    /// context so the output is stable.
    pub fn to_text(&self) -> String {
        let vocab = &self.descriptor.vocabulary;
        let mut out = String::new();
        let _ = writeln!(out, "@vocab {}", vocab.tokens().join(" "));
        let _ = writeln!(out, "@eos {}", vocab.token(vocab.eos_id()).unwrap_or_default());
        let _ = writeln!(out, "@max_context {}", self.descriptor.max_context);
        let _ = writeln!(out, "@fallback {}", render_distribution(vocab, &self.fallback));
        let mut rules: Vec<_> = self.table.iter().collect();
        rules.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(b.0)));
        for (ctx, dist) in rules {
            let ctx: Vec<&str> = ctx.iter().map(|&id| vocab.token(id).unwrap_or_default()).collect();
            let _ = writeln!(out, "{} -> {}", ctx.join(" "), render_distribution(vocab, dist));
        }
        out
    }
}

fn parse_distribution(vocab: &Vocabulary, s: &str, line: usize) -> Result<TokenLogProbs, ToyLmError> {
    let perr = |message: String| ToyLmError::Parse { line, message };
    let mut probs = vec![0.0f64; vocab.len()];
    let mut seen = vec![false; vocab.len()];
    for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (tok, p) = entry
            .rsplit_once(':')
            .ok_or_else(|| perr(format!("expected token:prob, got {entry:?}")))?;
        let id = vocab
            .id_of(tok.trim())
            .ok_or_else(|| perr(format!("unknown token {tok:?}")))? as usize;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| perr(format!("invalid probability {p:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(perr(format!("probability {p} outside [0, 1]")));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(perr(format!("token {tok:?} listed twice")));
        }
        probs[id] = p;
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(perr(format!("probabilities sum to {total}, expected 1")));
    }
    // Renormalize away the sub-tolerance residue so stored rows are exact distributions.
    let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    crate::logprobs::normalize_logits(&logits, vocab.len()).map_err(|e| perr(e.to_string()))
}

fn render_distribution(vocab: &Vocabulary, dist: &TokenLogProbs) -> String {
    dist.values()
        .iter()
        .enumerate()
        .filter(|(_, lp)| lp.is_finite())
        .map(|(i, lp)| format!("{}:{}", vocab.token(i as TokenId).unwrap_or_default(), lp.exp()))
        .collect::<Vec<_>>()
        .join(", ")
}

impl LanguageModel for ToyTableLM {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<TokenLogProbs, BackendError> {
        check_context(&self.descriptor, context)?;
        Ok(self.lookup(context).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
@vocab t0 t1 t2 </s>
@eos </s>
@max_context 16
-> t0:0.25, t1:0.25, t2:0.25, </s>:0.25
t1 -> t2:0.9, </s>:0.1
t1 t2 -> </s>:1
";

    #[test]
    fn uniform_fallback_for_unseen_context() {
        let v = Arc::new(Vocabulary::with_eos_token(["a", "b", "c", "</s>"], "</s>").unwrap());
        let lm = ToyTableLM::uniform(v);
        let d = lm.next_token_distribution(&[0, 2, 1]).unwrap();
        for &x in d.values() {
            assert!((x + 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn table_readback() {
        let lm = ToyTableLM::parse(SAMPLE).unwrap();
        let d = lm.next_token_distribution(&[1]).unwrap();
        assert!((d.get(2) - 0.9f64.ln()).abs() < 1e-12);
        assert_eq!(d.get(0), f64::NEG_INFINITY);
    }

    #[test]
    fn longest_suffix_wins() {
        let lm = ToyTableLM::parse(SAMPLE).unwrap();
        assert_eq!(lm.next_token_distribution(&[0, 1, 2]).unwrap().argmax(), 3);
        assert_eq!(lm.next_token_distribution(&[0, 0, 1]).unwrap().argmax(), 2);
        // order-0 rule catches everything else
        let d = lm.next_token_distribution(&[0]).unwrap();
        assert!((d.get(0) + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn enforces_max_context() {
        let lm = ToyTableLM::parse(SAMPLE).unwrap();
        assert!(matches!(
            lm.next_token_distribution(&[0; 17]),
            Err(BackendError::ContextOverflow { len: 17, max: 16 })
        ));
        assert!(matches!(
            lm.next_token_distribution(&[7]),
            Err(BackendError::UnknownToken { id: 7, .. })
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_sum = "@vocab a </s>\n@eos </s>\na -> a:0.5, </s>:0.4\n";
        match ToyTableLM::parse(bad_sum) {
            Err(ToyLmError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let too_long = "@vocab a </s>\n@eos </s>\na a a -> a:1\n";
        assert!(matches!(ToyTableLM::parse(too_long), Err(ToyLmError::Parse { line: 3, .. })));
        let dup = "@vocab a </s>\n@eos </s>\na -> a:1\na -> </s>:1\n";
        assert!(matches!(ToyTableLM::parse(dup), Err(ToyLmError::Parse { line: 4, .. })));
        assert!(ToyTableLM::parse("@eos a\n").is_err());
    }

    #[test]
    fn text_round_trip_preserves_lookups() {
        let lm = ToyTableLM::parse(SAMPLE).unwrap();
        let back = ToyTableLM::parse(&lm.to_text()).unwrap();
        for ctx in [vec![], vec![1], vec![1, 2], vec![0, 0]] {
            let a = lm.next_token_distribution(&ctx).unwrap();
            let b = back.next_token_distribution(&ctx).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!(x == y || (x - y).abs() < 1e-12);
            }
        }
        assert_eq!(back.descriptor().max_context, 16);
    }
}
