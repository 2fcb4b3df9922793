//! Online chat pipeline: query vectorization, vector retrieval, rerank,
//! top-K selection, prompt construction and generation.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::clients::{instructions, ClientError, EmbedSide, ModelClient, RerankScore};
use crate::text::normalize_for_match;
use crate::vectorstore::{Collection, Payload, PartitionKey, RetrievalResult, SharedCollection, StoreError};
use crate::REFUSAL;

pub mod prompt {
    //! Chat prompt template.
    //!
    //! ```text
    //! {preamble}
    //!
    //! ### Context
    //! [1] {chunk 1}
    //! [2] {chunk 2}
    //!
    //! ### Question
    //! {query}
    //!
    //! ### Answer
    //! ```
    //!
    //! With no chunks the context section holds [`NO_CONTEXT`] and
    //! [`NO_CONTEXT_INSTRUCTION`] instead of numbered blocks.

    use serde::{Deserialize, Serialize};

    use crate::REFUSAL;

    pub const CONTEXT_HEADER: &str = "### Context\n";
    pub const QUESTION_HEADER: &str = "\n### Question\n";
    pub const ANSWER_HEADER: &str = "\n### Answer\n";
    pub const NO_CONTEXT: &str = "(no context retrieved)";
    pub const NO_CONTEXT_INSTRUCTION: &str =
        "No context passages are available, so reply with the refusal sentence.";

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum PromptTemplate {
        #[default]
        Default,
    }

    impl std::str::FromStr for PromptTemplate {
        type Err = String;

        fn from_str(s: &str) -> Result<Self, Self::Err> {
            match s {
                "default" => Ok(Self::Default),
                other => Err(format!("unknown prompt template {other:?}")),
            }
        }
    }

    pub fn preamble(template: PromptTemplate) -> String {
        match template {
            PromptTemplate::Default => format!(
                "Answer the question using only the numbered context passages below. \
                 Cite each passage you rely on by its number in square brackets, for example [1]. \
                 If the context does not contain the answer, reply exactly: \"{REFUSAL}\""
            ),
        }
    }

    /// Renders the prompt for `query` over `chunks` in the given order.
    pub fn build_prompt(query: &str, chunks: &[&str], template: PromptTemplate) -> String {
        let mut p = preamble(template);
        p.push_str("\n\n");
        p.push_str(CONTEXT_HEADER);
        if chunks.is_empty() {
            p.push_str(NO_CONTEXT);
            p.push('\n');
            p.push_str(NO_CONTEXT_INSTRUCTION);
            p.push('\n');
        }
        for (i, c) in chunks.iter().enumerate() {
            p.push_str(&format!("[{}] {}\n", i + 1, c));
        }
        p.push_str(QUESTION_HEADER);
        p.push_str(query);
        p.push('\n');
        p.push_str(ANSWER_HEADER);
        p
    }
}

pub use prompt::{build_prompt, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Vectorize,
    Retrieve,
    Rerank,
    Select,
    Generate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Vectorize => "vectorize",
            Stage::Retrieve => "retrieve",
            Stage::Rerank => "rerank",
            Stage::Select => "select",
            Stage::Generate => "generate",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageFailure,
    },
}

fn at<E: Into<StageFailure>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub retrieve_n: usize,
    pub top_k: usize,
    pub score_threshold: f64,
    /// Apply the threshold to the normalized rerank score instead of the
    /// vector similarity.
    pub threshold_post_rerank: bool,
    pub scope: Vec<PartitionKey>,
    pub instruction: String,
    pub template: PromptTemplate,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            retrieve_n: 32,
            top_k: 8,
            score_threshold: 0.35,
            threshold_post_rerank: false,
            scope: vec![PartitionKey::public()],
            instruction: instructions::RETRIEVAL.to_string(),
            template: PromptTemplate::Default,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_k < 1 || self.top_k > self.retrieve_n {
            return Err(PipelineError::Config(format!(
                "need 1 <= top_k <= retrieve_n, got top_k={} retrieve_n={}",
                self.top_k, self.retrieve_n
            )));
        }
        if !(-1.0..=1.0).contains(&self.score_threshold) {
            return Err(PipelineError::Config(format!(
                "score_threshold {} outside [-1, 1]",
                self.score_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: String,
    pub similarity: f64,
    pub rerank: RerankScore,
    pub partition: PartitionKey,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub citations: Vec<String>,
    /// The selected top-K chunks in rerank order, as numbered in the prompt.
    pub retrieved: Vec<RetrievedChunk>,
    pub unanswerable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: Stage,
    pub count: usize,
    pub elapsed_us: u64,
}

/// Chunk IDs cited as `[n]` in `text`, in first-mention order. Markers that
/// do not name a selected chunk are ignored.
pub fn parse_citations(text: &str, selected: &[RetrievedChunk]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b']' {
                if let Ok(n) = text[start..j].parse::<usize>() {
                    if let Some(c) = n.checked_sub(1).and_then(|k| selected.get(k)) {
                        if !out.contains(&c.chunk_id) {
                            out.push(c.chunk_id.clone());
                        }
                    }
                }
                i = j;
            }
        }
        i += 1;
    }
    out
}

pub fn is_refusal(text: &str) -> bool {
    normalize_for_match(text).contains(&normalize_for_match(REFUSAL))
}

/// Reranks `candidates` and keeps the `top_k` best by raw rerank score,
/// ties by ascending chunk_id. With `min_normalized`, candidates whose
/// normalized score falls below it are dropped first.
pub fn rerank_select(
    client: &dyn ModelClient,
    query: &str,
    candidates: Vec<RetrievalResult>,
    top_k: usize,
    min_normalized: Option<f64>,
) -> Result<Vec<RetrievedChunk>, ClientError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.payload.text.clone()).collect();
    let scores = client.rerank(query, &texts)?;
    if scores.len() != candidates.len() {
        return Err(ClientError::Fatal(format!(
            "reranker returned {} scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    let mut scored: Vec<RetrievedChunk> = candidates
        .into_iter()
        .zip(scores)
        .filter(|(_, s)| min_normalized.map_or(true, |t| s.normalized >= t))
        .map(|(c, rerank)| RetrievedChunk {
            chunk_id: c.chunk_id,
            similarity: c.similarity,
            rerank,
            partition: c.partition,
            payload: c.payload,
        })
        .collect();
    scored.sort_by(|a, b| {
        b.rerank
            .raw
            .total_cmp(&a.rerank.raw)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
            .then_with(|| a.partition.cmp(&b.partition))
    });
    scored.truncate(top_k);
    Ok(scored)
}

/// Request-independent pipeline; `answer` is reentrant.
#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    store: SharedCollection,
    client: Arc<dyn ModelClient>,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        store: SharedCollection,
        client: Arc<dyn ModelClient>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            config,
            store,
            client,
        })
    }

    pub fn answer(&self, query: &str) -> Result<Answer, PipelineError> {
        self.answer_traced(query).map(|(a, _)| a)
    }

    pub fn answer_traced(&self, query: &str) -> Result<(Answer, Vec<TraceEvent>), PipelineError> {
        answer_query(query, &self.config, &self.store.read(), self.client.as_ref())
    }
}

struct Tracer {
    events: Vec<TraceEvent>,
    last: Instant,
}

impl Tracer {
    fn mark(&mut self, stage: Stage, count: usize) {
        let now = Instant::now();
        let elapsed_us = now.duration_since(self.last).as_micros() as u64;
        debug!(%stage, count, elapsed_us, "pipeline stage");
        self.events.push(TraceEvent {
            stage,
            count,
            elapsed_us,
        });
        self.last = now;
    }
}

/// Embeds `query` on the instructed query side.
pub fn embed_query(
    client: &dyn ModelClient,
    instruction: &str,
    query: &str,
) -> Result<Vec<f32>, ClientError> {
    let mut v = client.embed(&[query.to_string()], &EmbedSide::Query(instruction.to_string()))?;
    v.pop()
        .map(|e| e.values)
        .ok_or_else(|| ClientError::Fatal("embedder returned no vector".into()))
}

/// Runs the five pipeline steps and returns the answer with its trace.
pub fn answer_query(
    query: &str,
    config: &PipelineConfig,
    store: &Collection,
    client: &dyn ModelClient,
) -> Result<(Answer, Vec<TraceEvent>), PipelineError> {
    config.validate()?;
    let mut trace = Tracer {
        events: Vec::with_capacity(5),
        last: Instant::now(),
    };

    let qv = embed_query(client, &config.instruction, query).map_err(at(Stage::Vectorize))?;
    trace.mark(Stage::Vectorize, 1);

    let vector_threshold = if config.threshold_post_rerank {
        f64::NEG_INFINITY
    } else {
        config.score_threshold
    };
    let candidates = store
        .search(&qv, config.retrieve_n, vector_threshold, &config.scope)
        .map_err(at(Stage::Retrieve))?;
    trace.mark(Stage::Retrieve, candidates.len());

    let n_candidates = candidates.len();
    let min_normalized = config.threshold_post_rerank.then_some(config.score_threshold);
    let selected = rerank_select(client, query, candidates, config.top_k, min_normalized)
        .map_err(at(Stage::Rerank))?;
    trace.mark(Stage::Rerank, n_candidates);
    trace.mark(Stage::Select, selected.len());

    if selected.is_empty() {
        trace.mark(Stage::Generate, 0);
        return Ok((
            Answer {
                text: REFUSAL.to_string(),
                citations: Vec::new(),
                retrieved: Vec::new(),
                unanswerable: true,
            },
            trace.events,
        ));
    }

    let texts: Vec<&str> = selected.iter().map(|c| c.payload.text.as_str()).collect();
    let prompt = build_prompt(query, &texts, config.template);
    let text = client.generate(&prompt).map_err(at(Stage::Generate))?;
    trace.mark(Stage::Generate, 1);

    let unanswerable = is_refusal(&text);
    let citations = if unanswerable {
        Vec::new()
    } else {
        parse_citations(&text, &selected)
    };
    Ok((
        Answer {
            text,
            citations,
            retrieved: selected,
            unanswerable,
        },
        trace.events,
    ))
}

/// Retrieval ranking used for evaluation: vector search to `retrieve_n`
/// with the configured threshold, then rerank order over all survivors.
pub fn rank(
    query: &str,
    config: &PipelineConfig,
    store: &Collection,
    client: &dyn ModelClient,
) -> Result<Vec<RetrievedChunk>, PipelineError> {
    let qv = embed_query(client, &config.instruction, query).map_err(at(Stage::Vectorize))?;
    let vector_threshold = if config.threshold_post_rerank {
        f64::NEG_INFINITY
    } else {
        config.score_threshold
    };
    let candidates = store
        .search(&qv, config.retrieve_n, vector_threshold, &config.scope)
        .map_err(at(Stage::Retrieve))?;
    let n = candidates.len();
    let min_normalized = config.threshold_post_rerank.then_some(config.score_threshold);
    rerank_select(client, query, candidates, n, min_normalized).map_err(at(Stage::Rerank))
}
