//! Deterministic in-process model.
//!
//! Every capability is a pure function of its inputs:
//!
//! * **embed**: hashed character-trigram projection. The text is lowercased
//!   and split into alphanumeric words; each word `w` is padded to `<w>` and
//!   every 3-character window of the padded word is a feature (a text without
//!   words uses the single feature `<>`). Feature `f` adds `±1` to component
//!   `h % dim` where `h = fnv1a64(f)`, with sign `-1` iff the top bit of `h`
//!   is set. The result is L2-normalized. Query-side texts are rendered in
//!   instructed form and then reduced back to the query: a lexical model has
//!   no use for the task instruction, and its words would only dilute the
//!   query's similarity to every document alike.
//! * **rerank**: `raw = 10 * dice(query, doc) - 5` over lowercased word
//!   sets, normalized by the sigmoid. An exact textual match scores the
//!   maximum `+5`.
//! * **nsp**: `logit = 8 * jaccard(a, b) - 4` over lowercased word sets;
//!   symmetric, `+4` for identical vocabularies, `-4` for disjoint ones.
//! * **generate**: recognizes the chat prompt, the QA-generation prompt and
//!   the answer-rewriting prompt and fills a fixed template from them (see
//!   [`StubClient::generate`]).
//! * **judge**: `Relevance01` is word-set Jaccard; `StatementPresence` is a
//!   case-folded, whitespace-normalized substring test; `Quality0to3` is the
//!   rubric in [`quality_rubric`].

use std::collections::BTreeSet;

use super::{ClientError, EmbedSide, EmbeddingVector, InstructedQuery, JudgeKind, ModelClient, RerankScore};
use crate::pipeline::prompt as chat;
use crate::synthesis::prompts as synth;
use crate::text::{first_sentence, fnv1a64, jaccard, normalize_for_match, word_set, words};
use crate::REFUSAL;

pub const STUB_TAG: &str = "stub-v1";

#[derive(Debug, Clone)]
pub struct StubClient {
    dim: usize,
    tag: String,
}

impl StubClient {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            tag: format!("{STUB_TAG}-d{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        hashed_trigram_embedding(text, self.dim)
    }
}

impl Default for StubClient {
    fn default() -> Self {
        Self::new(256)
    }
}

/// Feature strings of the stub embedder, in text order.
pub fn trigram_features(text: &str) -> Vec<String> {
    let mut feats = Vec::new();
    for w in words(text) {
        let padded: Vec<char> = format!("<{}>", w.to_lowercase()).chars().collect();
        feats.extend(padded.windows(3).map(|win| win.iter().collect::<String>()));
    }
    if feats.is_empty() {
        feats.push("<>".to_string());
    }
    feats
}

pub fn hashed_trigram_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; dim];
    for f in trigram_features(text) {
        let h = fnv1a64(f.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every feature cancelled out; fall back to a fixed basis vector
        let mut v = vec![0.0f32; dim];
        v[0] = 1.0;
        return v;
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

fn dice(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

pub fn stub_rerank_raw(query: &str, doc: &str) -> f64 {
    10.0 * dice(&word_set(query), &word_set(doc)) - 5.0
}

pub fn stub_nsp_logit(a: &str, b: &str) -> f64 {
    8.0 * jaccard(a, b) - 4.0
}

/// Quality label for an answer given its question and source context.
///
/// * the canonical refusal answer → 3
/// * fewer than 3 answer words → 0
/// * otherwise, with `support` = share of answer words (by occurrence,
///   lowercased) found in the context vocabulary:
///   `< 0.25` → 0, `< 0.5` → 1, `< 0.8` → 2, else 3 when the answer has at
///   least 8 words and 2 when shorter.
pub fn quality_rubric(answer: &str, context: &str) -> u8 {
    if normalize_for_match(answer) == normalize_for_match(REFUSAL) {
        return 3;
    }
    let answer_words: Vec<String> = words(answer).map(str::to_lowercase).collect();
    if answer_words.len() < 3 {
        return 0;
    }
    let vocab = word_set(context);
    let supported = answer_words.iter().filter(|w| vocab.contains(*w)).count();
    let support = supported as f64 / answer_words.len() as f64;
    match support {
        s if s < 0.25 => 0,
        s if s < 0.5 => 1,
        s if s < 0.8 => 2,
        _ if answer_words.len() >= 8 => 3,
        _ => 2,
    }
}

pub fn statement_present(statement: &str, answer: &str) -> bool {
    let s = normalize_for_match(statement);
    !s.is_empty() && normalize_for_match(answer).contains(&s)
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(rest.find(end).map_or(rest, |i| &rest[..i]))
}

/// Numbered `[n] ...` blocks of a chat prompt's context section.
pub(crate) fn context_blocks(prompt: &str) -> Vec<String> {
    let Some(section) = between(prompt, chat::CONTEXT_HEADER, chat::QUESTION_HEADER) else {
        return Vec::new();
    };
    let mut blocks: Vec<String> = Vec::new();
    for line in section.lines() {
        let numbered = line
            .strip_prefix('[')
            .and_then(|r| r.split_once("] "))
            .filter(|(n, _)| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()));
        match (numbered, blocks.last_mut()) {
            (Some((_, body)), _) => blocks.push(body.to_string()),
            (None, Some(last)) => {
                last.push('\n');
                last.push_str(line);
            }
            (None, None) => {}
        }
    }
    blocks
}

impl StubClient {
    /// Template generator.
    ///
    /// * QA-generation prompt (ends with `### Response:`): reads the
    ///   `[document]` section and answers
    ///   `"[question] What does the text state about {head}?\n[answer] {first sentence}"`,
    ///   where `head` is the first six words of the document's first sentence.
    /// * answer-rewriting prompt: returns the short answer followed by the
    ///   first sentence of the references when that sentence is not already
    ///   contained in it.
    /// * chat prompt: the refusal string when the context section has no
    ///   numbered blocks, otherwise `"{block 1} [1]"`.
    /// * anything else: `"Echo: {first sentence of prompt}"`.
    fn template_generate(&self, prompt: &str) -> String {
        if prompt.trim_end().ends_with(synth::RESPONSE_MARKER) {
            let doc = between(prompt, synth::DOCUMENT_MARKER, synth::RESPONSE_MARKER)
                .unwrap_or("")
                .trim();
            let sentence = first_sentence(doc);
            let head: Vec<&str> = words(sentence).take(6).collect();
            return format!(
                "[question] What does the text state about {}?\n[answer] {}",
                head.join(" "),
                sentence
            );
        }
        if prompt.trim_end().ends_with(synth::REWRITE_TAIL) {
            let short = between(prompt, synth::SHORT_ANSWER_HEADER, synth::REWRITE_NOTE)
                .unwrap_or("")
                .trim();
            let refs = between(prompt, synth::REFERENCES_HEADER, synth::QUERY_HEADER)
                .unwrap_or("")
                .trim();
            let extra = first_sentence(refs);
            if extra.is_empty() || short.contains(extra) {
                return short.to_string();
            }
            return format!("{short} {extra}");
        }
        if prompt.contains(chat::CONTEXT_HEADER) {
            return match context_blocks(prompt).first() {
                Some(top) => format!("{top} [1]"),
                None => REFUSAL.to_string(),
            };
        }
        format!("Echo: {}", first_sentence(prompt))
    }
}

impl ModelClient for StubClient {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String], side: &EmbedSide) -> Result<Vec<EmbeddingVector>, ClientError> {
        Ok(super::embed_inputs(texts, side)
            .iter()
            .map(|t| {
                let text = match side {
                    EmbedSide::Query(_) => InstructedQuery::parse(t).map_or_else(|| t.clone(), |q| q.query),
                    EmbedSide::Document => t.clone(),
                };
                EmbeddingVector {
                    values: self.embed_one(&text),
                    model: self.tag.clone(),
                }
            })
            .collect())
    }

    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<RerankScore>, ClientError> {
        Ok(documents
            .iter()
            .map(|d| RerankScore::from_raw(stub_rerank_raw(query, d)))
            .collect())
    }

    fn nsp(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ClientError> {
        Ok(pairs.iter().map(|(a, b)| stub_nsp_logit(a, b)).collect())
    }

    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        if prompt.trim().is_empty() {
            return Err(ClientError::Fatal("empty prompt".into()));
        }
        Ok(self.template_generate(prompt))
    }

    fn judge(&self, kind: JudgeKind, inputs: &[String]) -> Result<f64, ClientError> {
        let need = match kind {
            JudgeKind::Quality0to3 => 3,
            JudgeKind::Relevance01 | JudgeKind::StatementPresence => 2,
        };
        if inputs.len() != need {
            return Err(ClientError::Fatal(format!(
                "{kind:?} expects {need} inputs, got {}",
                inputs.len()
            )));
        }
        Ok(match kind {
            JudgeKind::Relevance01 => jaccard(&inputs[0], &inputs[1]),
            JudgeKind::StatementPresence => f64::from(u8::from(statement_present(&inputs[0], &inputs[1]))),
            JudgeKind::Quality0to3 => f64::from(quality_rubric(&inputs[1], &inputs[2])),
        })
    }
}
