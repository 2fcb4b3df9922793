//! NSP-guided semantic segmentation.
//!
//! Text is split into sentences, every adjacent pair is scored by a
//! next-sentence-prediction model, and any span over the token budget is cut
//! at its weakest junction (lowest normalized continuation score), recursively,
//! until every piece fits. A single sentence that alone exceeds the budget is
//! emitted as its own chunk and flagged `oversized`.

mod sentences;
mod tokenizer;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{sigmoid, ClientError, ModelClient};

pub use sentences::{split_sentences, Sentence};
pub use tokenizer::{Tokenizer, WhitespaceTokenizer, WordPunctTokenizer};

pub const DEFAULT_MAX_TOKENS: usize = 512;
pub const MIN_MAX_TOKENS: usize = 16;

/// Pairs sent to the scorer per request.
const NSP_BATCH: usize = 64;

/// Anything that can produce a continuation logit for sentence pairs.
pub trait NspScorer: Sync {
    fn nsp_logits(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ClientError>;
}

impl<T: ModelClient + ?Sized> NspScorer for T {
    fn nsp_logits(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ClientError> {
        self.nsp(pairs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspLabel {
    Continue,
    Break,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    /// Boundary `i` sits between sentence `i` and sentence `i + 1`.
    pub boundary_index: usize,
    pub raw_logit: f64,
    /// Min-max normalized logit within one scoring pass.
    pub normalized: f64,
    pub predicted_label: NspLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub sentence_range: Range<usize>,
    pub text: String,
    pub token_count: usize,
    pub ordinal: usize,
    #[serde(default)]
    pub oversized: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentConfig {
    pub max_tokens: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("max_tokens must be at least {MIN_MAX_TOKENS}, got {0}")]
    BudgetTooSmall(usize),
    #[error("NSP scorer failed at boundary {boundary}: {source}")]
    Scorer {
        boundary: usize,
        #[source]
        source: ClientError,
    },
    #[error("NSP scorer returned {got} logits for {expected} pairs")]
    ScoreCount { expected: usize, got: usize },
}

impl SegmentError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, SegmentError::Scorer { source, .. } if source.is_retriable())
    }
}

/// Min-max normalization; a constant input maps to 0.5 everywhere.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Scores every interior sentence boundary in one pass.
pub fn score_boundaries(
    sentences: &[Sentence],
    scorer: &dyn NspScorer,
) -> Result<Vec<BoundaryScore>, SegmentError> {
    if sentences.len() < 2 {
        return Ok(Vec::new());
    }
    let pairs: Vec<(String, String)> = sentences
        .windows(2)
        .map(|w| (w[0].text.clone(), w[1].text.clone()))
        .collect();

    let mut raw = Vec::with_capacity(pairs.len());
    for (batch_no, batch) in pairs.chunks(NSP_BATCH).enumerate() {
        let logits = scorer
            .nsp_logits(batch)
            .map_err(|source| SegmentError::Scorer {
                boundary: batch_no * NSP_BATCH,
                source,
            })?;
        if logits.len() != batch.len() {
            return Err(SegmentError::ScoreCount {
                expected: batch.len(),
                got: logits.len(),
            });
        }
        raw.extend(logits);
    }

    let normalized = min_max_normalize(&raw);
    Ok(raw
        .iter()
        .zip(normalized)
        .enumerate()
        .map(|(i, (&raw_logit, normalized))| BoundaryScore {
            boundary_index: i,
            raw_logit,
            normalized,
            predicted_label: if sigmoid(raw_logit) >= 0.5 {
                NspLabel::Continue
            } else {
                NspLabel::Break
            },
        })
        .collect())
}

fn span_text<'a>(text: &'a str, sentences: &[Sentence], range: &Range<usize>) -> &'a str {
    &text[sentences[range.start].span.start..sentences[range.end - 1].span.end]
}

/// Recursive binary splitting of `[0, sentences.len())` given one pass of
/// normalized boundary scores. Returns the sentence ranges in order.
pub fn split_ranges(
    text: &str,
    sentences: &[Sentence],
    scores: &[f64],
    max_tokens: usize,
    tokenizer: &dyn Tokenizer,
) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    if sentences.is_empty() {
        return out;
    }
    // explicit stack, right half pushed first so ranges come out in order
    let mut stack = vec![0..sentences.len()];
    while let Some(range) = stack.pop() {
        let tokens = tokenizer.count(span_text(text, sentences, &range));
        if tokens <= max_tokens || range.len() == 1 {
            out.push(range);
            continue;
        }
        let boundaries = range.start..range.end - 1;
        let shrinks = |b: &usize| {
            let left = tokenizer.count(span_text(text, sentences, &(range.start..b + 1)));
            let right = tokenizer.count(span_text(text, sentences, &(b + 1..range.end)));
            left < tokens && right < tokens
        };
        let pick = |candidates: &mut dyn Iterator<Item = usize>| {
            candidates.fold(None::<usize>, |best, b| match best {
                Some(cur) if scores[cur] <= scores[b] => Some(cur),
                _ => Some(b),
            })
        };
        let cut = pick(&mut boundaries.clone().filter(shrinks))
            .or_else(|| pick(&mut boundaries.clone()))
            .expect("range of two or more sentences has a boundary");
        stack.push(cut + 1..range.end);
        stack.push(range.start..cut + 1);
    }
    out
}

/// Segments one cleaned document into budgeted chunks.
pub fn segment(
    doc_id: &str,
    text: &str,
    config: SegmentConfig,
    scorer: &dyn NspScorer,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>, SegmentError> {
    if config.max_tokens < MIN_MAX_TOKENS {
        return Err(SegmentError::BudgetTooSmall(config.max_tokens));
    }
    let sentences = split_sentences(text, tokenizer);
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let ranges = if tokenizer.count(text) <= config.max_tokens {
        vec![0..sentences.len()]
    } else {
        let scores: Vec<f64> = score_boundaries(&sentences, scorer)?
            .into_iter()
            .map(|b| b.normalized)
            .collect();
        split_ranges(text, &sentences, &scores, config.max_tokens, tokenizer)
    };

    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(ordinal, range)| {
            let chunk_text = span_text(text, &sentences, &range).to_string();
            let token_count = tokenizer.count(&chunk_text);
            Chunk {
                chunk_id: format!("{doc_id}#{ordinal}"),
                doc_id: doc_id.to_string(),
                oversized: token_count > config.max_tokens,
                sentence_range: range,
                text: chunk_text,
                token_count,
                ordinal,
            }
        })
        .collect())
}
