#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use evcomp::backend::{LanguageModel, ToyTableLM};
use evcomp::harness::PromptTemplateSet;
use evcomp::logprobs::TokenLogProbs;
use evcomp::metrics::{self, ExampleScore};
use evcomp::types::{EvidenceBundle, SourceTag};
use evcomp::vocab::{TokenId, Vocabulary};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// `w0 .. w{n-2}` plus `</s>` as the last id.
pub fn vocab(n: usize) -> Arc<Vocabulary> {
    let mut tokens: Vec<String> = (0..n - 1).map(|i| format!("w{i}")).collect();
    tokens.push("</s>".into());
    Arc::new(Vocabulary::new(tokens, (n - 1) as TokenId).unwrap())
}

/// Random distribution; about one entry in five is exactly zero.
pub fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.01..1.0) })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}

/// Order-1 table over every token plus a random fallback for the empty context.
pub fn random_order1(rng: &mut ChaCha8Rng, v: &Arc<Vocabulary>) -> ToyTableLM {
    let n = v.len();
    let fallback = TokenLogProbs::from_probs(&random_probs(rng, n)).unwrap();
    let mut lm = ToyTableLM::new(v.clone(), fallback).unwrap();
    for t in 0..n as TokenId {
        lm.insert(vec![t], TokenLogProbs::from_probs(&random_probs(rng, n)).unwrap())
            .unwrap();
    }
    lm
}

pub fn random_prompt(rng: &mut ChaCha8Rng, v: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| rng.gen_range(0..v.len() - 1) as TokenId).collect()
}

/// Lowest index among the maxima.
pub fn first_max(values: &[f64]) -> TokenId {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Plain greedy loop over raw backend outputs.
pub fn oracle_greedy(lm: &dyn LanguageModel, prompt: &[TokenId], max_new: usize) -> Vec<TokenId> {
    let eos = lm.vocabulary().eos_id();
    let mut ctx = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new {
        let tok = first_max(lm.next_token_distribution(&ctx).unwrap().values());
        if tok == eos {
            break;
        }
        ctx.push(tok);
        out.push(tok);
    }
    out
}

/// Step oracle: recomputes `alpha * lp_t + (1 - alpha) * lp_c` for every token
/// from the raw distributions, with a zero weight contributing exactly zero.
/// Returns every chosen token (including a final eos) with its source tag.
pub fn oracle_ensemble(
    compression: &dyn LanguageModel,
    target: &dyn LanguageModel,
    compression_prompt: &[TokenId],
    generation_prompt: &[TokenId],
    alpha: f64,
    max_new: usize,
) -> Vec<(TokenId, SourceTag)> {
    let eos = target.vocabulary().eos_id();
    let mut c_ctx = compression_prompt.to_vec();
    let mut g_ctx = generation_prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new {
        let t = target.next_token_distribution(&g_ctx).unwrap().into_values();
        let c = compression.next_token_distribution(&c_ctx).unwrap().into_values();
        let scores: Vec<f64> = (0..t.len())
            .map(|v| {
                let a = if alpha == 0.0 { 0.0 } else { alpha * t[v] };
                let b = if alpha == 1.0 { 0.0 } else { (1.0 - alpha) * c[v] };
                a + b
            })
            .collect();
        let tok = first_max(&scores);
        let (ta, ca) = (first_max(&t), first_max(&c));
        let tag = match (tok == ta, tok == ca) {
            (true, true) => SourceTag::BothArgmax,
            (true, false) => SourceTag::TargetArgmax,
            (false, true) => SourceTag::CompressionArgmax,
            (false, false) => SourceTag::Neither,
        };
        out.push((tok, tag));
        if tok == eos {
            break;
        }
        c_ctx.push(tok);
        g_ctx.push(tok);
    }
    out
}

/// `exp(-(sum of ln p) / n)` with the log-probabilities read one step at a time.
pub fn oracle_perplexity(lm: &dyn LanguageModel, prefix: &[TokenId], seq: &[TokenId]) -> f64 {
    let mut ctx = prefix.to_vec();
    let mut total = 0.0;
    for &t in seq {
        total += lm.next_token_distribution(&ctx).unwrap().values()[t as usize];
        ctx.push(t);
    }
    (-total / seq.len() as f64).exp()
}

/// Whitespace split, unknown words to `<unk>`.
pub fn encode(v: &Vocabulary, text: &str) -> Vec<TokenId> {
    let unk = v.id_of("<unk>").expect("vocabulary has <unk>");
    text.split_whitespace().map(|w| v.id_of(w).unwrap_or(unk)).collect()
}

pub fn words(v: &Vocabulary, ids: &[TokenId]) -> String {
    ids.iter().map(|&t| v.token(t).unwrap()).collect::<Vec<_>>().join(" ")
}

pub struct OracleRecord {
    pub evidence: String,
    pub prediction: String,
    pub score: ExampleScore,
}

/// Recomputes one example end to end: step-oracle compression, greedy answer
/// with a 32-token cap, metrics, and evidence perplexity under the target
/// model after the answer prompt's prefix.
pub fn oracle_record(
    comp: &dyn LanguageModel,
    tgt: &dyn LanguageModel,
    templates: &PromptTemplateSet,
    b: &EvidenceBundle,
    alpha: f64,
    max_new: usize,
) -> OracleRecord {
    let v = tgt.vocabulary();
    let cp = encode(v, &templates.render_compression_context(b));
    let gp = encode(v, &templates.render_generation_context(b));
    let steps = oracle_ensemble(comp, tgt, &cp, &gp, alpha, max_new);
    let evidence: Vec<TokenId> = steps.iter().map(|s| s.0).filter(|&t| t != v.eos_id()).collect();
    let evidence_text = words(v, &evidence);
    let prompt = encode(v, &templates.render_eval_prompt(&[], &b.query, &evidence_text));
    let prediction = words(v, &oracle_greedy(tgt, &prompt, 32));
    let ppl = (!evidence.is_empty())
        .then(|| oracle_perplexity(tgt, &encode(v, &templates.render_evidence_prefix(&[], &b.query)), &evidence));
    let retrieved: usize = b.documents.iter().map(|d| d.split_whitespace().count()).sum();
    let score = ExampleScore {
        accuracy: metrics::accuracy(&prediction, &b.gold_answers),
        accuracy_containment: metrics::accuracy(&prediction, &b.gold_answers),
        accuracy_exact: metrics::exact_match(&prediction, &b.gold_answers),
        f1: metrics::token_f1(&prediction, &b.gold_answers),
        hits: metrics::hits(&b.documents, &b.gold_answers),
        compression_rate: retrieved as f64 / evidence.len().max(1) as f64,
        evidence_perplexity: ppl,
    };
    OracleRecord {
        evidence: evidence_text,
        prediction,
        score,
    }
}
