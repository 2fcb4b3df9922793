//! One capability interface for every neural dependency.
//!
//! [`ModelClient`] covers the embedder, the cross-encoder reranker, the NSP
//! scorer, the generator and the judge. Two implementations ship:
//! [`StubClient`], a deterministic in-process model built from documented
//! lexical formulas, and [`HttpClient`], which speaks the JSON wire protocol
//! in [`wire`].

mod http;
mod stub;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClient, HttpConfig, RetryPolicy};
pub use stub::{hashed_trigram_embedding, trigram_features, StubClient};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    /// Transient failure (transport, timeout, 5xx); the call may be retried.
    #[error("retriable model error: {0}")]
    Retriable(String),
    #[error("model error: {0}")]
    Fatal(String),
}

impl ClientError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ClientError::Retriable(_))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Query with its task instruction, rendered as
/// `"Instruct: {instruction}\nQuery: {query}"`. Documents are never instructed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructedQuery {
    pub instruction: String,
    pub query: String,
    pub rendered: String,
}

const INSTRUCT_PREFIX: &str = "Instruct: ";
const QUERY_PREFIX: &str = "\nQuery: ";

impl InstructedQuery {
    pub fn new(instruction: &str, query: &str) -> Self {
        Self {
            instruction: instruction.to_string(),
            query: query.to_string(),
            rendered: format!("{INSTRUCT_PREFIX}{instruction}{QUERY_PREFIX}{query}"),
        }
    }

    /// Inverse of the rendering, for instructions without a `"\nQuery: "` in them.
    pub fn parse(rendered: &str) -> Option<Self> {
        let rest = rendered.strip_prefix(INSTRUCT_PREFIX)?;
        let (instruction, query) = rest.split_once(QUERY_PREFIX)?;
        Some(Self::new(instruction, query))
    }
}

pub fn render_instructed_query(instruction: &str, query: &str) -> String {
    InstructedQuery::new(instruction, query).rendered
}

/// Default task instructions, keyed by task. Callers may supply their own.
pub mod instructions {
    pub const RETRIEVAL: &str = "Given a question, retrieve passages that answer the question";
    pub const RERANK: &str = "Given a query, retrieve documents relevant to the query";
    pub const STS: &str = "Retrieve semantically similar text";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "side", content = "instruction")]
pub enum EmbedSide {
    Query(String),
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankScore {
    pub raw: f64,
    /// `sigmoid(raw)`.
    pub normalized: f64,
}

impl RerankScore {
    pub fn from_raw(raw: f64) -> Self {
        Self {
            raw,
            normalized: sigmoid(raw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    /// inputs `[question, answer, context]`; value in {0, 1, 2, 3}
    Quality0to3,
    /// inputs `[text_a, text_b]`; value in [0, 1]
    Relevance01,
    /// inputs `[statement, answer]`; value 1.0 if present else 0.0
    StatementPresence,
}

pub trait ModelClient: Send + Sync {
    /// Tag of the producing model, recorded on every vector.
    fn model_tag(&self) -> &str;

    /// One vector per text, in order. Query-side texts are embedded in their
    /// instructed form.
    fn embed(&self, texts: &[String], side: &EmbedSide) -> Result<Vec<EmbeddingVector>, ClientError>;

    /// One score per document, order-aligned.
    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<RerankScore>, ClientError>;

    /// Raw continuation logit for each `(a, b)` pair.
    fn nsp(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ClientError>;

    fn generate(&self, prompt: &str) -> Result<String, ClientError>;

    fn judge(&self, kind: JudgeKind, inputs: &[String]) -> Result<f64, ClientError>;
}

/// Texts as the embedder sees them for `side`.
pub fn embed_inputs(texts: &[String], side: &EmbedSide) -> Vec<String> {
    match side {
        EmbedSide::Document => texts.to_vec(),
        EmbedSide::Query(instruction) => texts
            .iter()
            .map(|q| render_instructed_query(instruction, q))
            .collect(),
    }
}
