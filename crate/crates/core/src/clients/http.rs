use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::warn;

use super::wire::*;
use super::{
    embed_inputs, ClientError, EmbedSide, EmbeddingVector, JudgeKind, ModelClient, RerankScore,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model_tag: String,
    pub timeout: Duration,
    pub max_batch: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model_tag: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_tag: model_tag.into(),
            timeout: Duration::from_secs(60),
            max_batch: 32,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

/// Counting gate bounding concurrent requests to one endpoint.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Remote model server speaking the [`wire`](super::wire) protocol.
pub struct HttpClient {
    config: HttpConfig,
    agent: ureq::Agent,
    dim: OnceLock<usize>,
    gate: Gate,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("config", &self.config).finish()
    }
}

fn classify(err: ureq::Error) -> ClientError {
    match err {
        ureq::Error::StatusCode(code) if code >= 500 || code == 429 => {
            ClientError::Retriable(format!("server returned {code}"))
        }
        ureq::Error::StatusCode(code) => ClientError::Fatal(format!("server returned {code}")),
        ureq::Error::Json(e) => ClientError::Fatal(format!("bad response body: {e}")),
        e @ (ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Protocol(_)) => ClientError::Retriable(e.to_string()),
        e => ClientError::Fatal(e.to_string()),
    }
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            gate: Gate::new(config.max_in_flight),
            agent,
            config,
            dim: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ClientError> {
        let url = format!("{}{}", self.config.endpoint.trim_end_matches('/'), path);
        let attempts = self.config.retry.attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.delay(attempt - 1));
            }
            let result = {
                let _permit = self.gate.acquire();
                self.agent
                    .post(&url)
                    .send_json(body)
                    .and_then(|mut r| r.body_mut().read_json::<Resp>())
                    .map_err(classify)
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retriable() => {
                    warn!(%url, attempt, error = %e, "model request failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| ClientError::Retriable("no attempt made".into())))
    }

    fn check_dim(&self, dim: usize) -> Result<(), ClientError> {
        let first = *self.dim.get_or_init(|| dim);
        if first != dim {
            return Err(ClientError::Fatal(format!(
                "embedding dimension drifted from {first} to {dim}"
            )));
        }
        Ok(())
    }
}

impl ModelClient for HttpClient {
    fn model_tag(&self) -> &str {
        &self.config.model_tag
    }

    fn embed(&self, texts: &[String], side: &EmbedSide) -> Result<Vec<EmbeddingVector>, ClientError> {
        let (wire_side, instruction) = match side {
            EmbedSide::Query(i) => (WireSide::Query, Some(i.clone())),
            EmbedSide::Document => (WireSide::Document, None),
        };
        let inputs = embed_inputs(texts, side);
        let mut out = Vec::with_capacity(texts.len());
        for batch in inputs.chunks(self.config.max_batch.max(1)) {
            let resp: EmbedResponse = self.post(
                EMBED_PATH,
                &EmbedRequest {
                    texts: batch.to_vec(),
                    side: wire_side,
                    instruction: instruction.clone(),
                },
            )?;
            if resp.vectors.len() != batch.len() {
                return Err(ClientError::Fatal(format!(
                    "embed returned {} vectors for {} texts",
                    resp.vectors.len(),
                    batch.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != resp.dim {
                    return Err(ClientError::Fatal(format!(
                        "vector of length {} in a response declaring dim {}",
                        v.len(),
                        resp.dim
                    )));
                }
                self.check_dim(v.len())?;
                out.push(EmbeddingVector {
                    values: v,
                    model: self.config.model_tag.clone(),
                });
            }
        }
        Ok(out)
    }

    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<RerankScore>, ClientError> {
        let mut out = Vec::with_capacity(documents.len());
        for batch in documents.chunks(self.config.max_batch.max(1)) {
            let resp: RerankResponse = self.post(
                RERANK_PATH,
                &RerankRequest {
                    query: query.to_string(),
                    documents: batch.to_vec(),
                },
            )?;
            if resp.raw_scores.len() != batch.len() {
                return Err(ClientError::Fatal(format!(
                    "rerank returned {} scores for {} documents",
                    resp.raw_scores.len(),
                    batch.len()
                )));
            }
            out.extend(resp.raw_scores.into_iter().map(RerankScore::from_raw));
        }
        Ok(out)
    }

    fn nsp(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ClientError> {
        let mut out = Vec::with_capacity(pairs.len());
        for batch in pairs.chunks(self.config.max_batch.max(1)) {
            let resp: NspResponse = self.post(
                NSP_PATH,
                &NspRequest {
                    pairs: batch.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
                },
            )?;
            if resp.logits.len() != batch.len() {
                return Err(ClientError::Fatal(format!(
                    "nsp returned {} logits for {} pairs",
                    resp.logits.len(),
                    batch.len()
                )));
            }
            out.extend(resp.logits);
        }
        Ok(out)
    }

    fn generate(&self, prompt: &str) -> Result<String, ClientError> {
        let resp: GenerateResponse = self.post(
            GENERATE_PATH,
            &GenerateRequest {
                prompt: prompt.to_string(),
            },
        )?;
        Ok(resp.text)
    }

    fn judge(&self, kind: JudgeKind, inputs: &[String]) -> Result<f64, ClientError> {
        let resp: JudgeResponse = self.post(
            JUDGE_PATH,
            &JudgeRequest {
                kind,
                inputs: inputs.to_vec(),
            },
        )?;
        Ok(resp.value)
    }
}
