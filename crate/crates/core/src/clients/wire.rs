//! JSON bodies of the model-server protocol. Every capability is an HTTP
//! `POST` with a UTF-8 JSON body; field names below are normative.
//!
//! | path        | request                                   | response                          |
//! |-------------|-------------------------------------------|-----------------------------------|
//! | `/embed`    | `{texts, side, instruction}`              | `{vectors, dim, model}`           |
//! | `/rerank`   | `{query, documents}`                      | `{raw_scores}`                    |
//! | `/nsp`      | `{pairs: [[a, b], ...]}`                  | `{logits}`                        |
//! | `/generate` | `{prompt}`                                | `{text}`                          |
//! | `/judge`    | `{kind, inputs}`                          | `{value}`                         |
//!
//! For `/embed`, `side` is `"query"` or `"document"`. Query texts are sent
//! already rendered as instructed queries; `instruction` repeats the
//! instruction for servers that want it and is `null` for documents.
//! `kind` is one of `"quality0to3"`, `"relevance01"`, `"statement_presence"`.

use serde::{Deserialize, Serialize};

use super::JudgeKind;

pub const EMBED_PATH: &str = "/embed";
pub const RERANK_PATH: &str = "/rerank";
pub const NSP_PATH: &str = "/nsp";
pub const GENERATE_PATH: &str = "/generate";
pub const JUDGE_PATH: &str = "/judge";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireSide {
    Query,
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub side: WireSide,
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
    pub dim: usize,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub query: String,
    pub documents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub raw_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NspRequest {
    pub pairs: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NspResponse {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub kind: JudgeKind,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub value: f64,
}
