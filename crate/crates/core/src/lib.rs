//! Retrieval-augmented generation engine and training-data factory.
//!
//! The crate covers the offline half of a RAG system (corpus cleaning,
//! NSP-guided segmentation, a partitioned exact vector store) and the online
//! chat pipeline (embed, retrieve, rerank, prompt, generate), together with
//! the tooling used to build retrieval models: SimANS hard-negative mining,
//! synthetic QA generation, contrastive losses over a toy encoder, and
//! recall-style evaluation.
//!
//! Every neural dependency sits behind [`clients::ModelClient`]. The
//! deterministic [`clients::StubClient`] makes the whole crate runnable and
//! testable without any model server.

pub mod clients;
pub mod corpus;
pub mod evaluation;
pub mod mining;
pub mod pipeline;
pub mod segmentation;
pub mod synthesis;
pub mod text;
pub mod training;
pub mod vectorstore;

pub use clients::{ClientError, EmbedSide, HttpClient, ModelClient, StubClient};
pub use corpus::{Document, Library};
pub use pipeline::{Answer, Pipeline, PipelineConfig};
pub use segmentation::{segment, Chunk, SegmentConfig};
pub use vectorstore::{Collection, Metric, PartitionKey, RetrievalResult, SharedCollection};

/// Canonical answer for questions the retrieved context cannot support.
pub const REFUSAL: &str = "Sorry. I cannot find the answer based on the context.";
