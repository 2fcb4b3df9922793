//! Layered configuration: flags > `RAGFORGE_*` environment > TOML file > defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "RAGFORGE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub store: StoreSection,
    pub client: ClientSection,
    pub pipeline: PipelineSection,
    pub segment: SegmentSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
    pub collection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSection {
    /// `"stub"` or a base URL.
    pub endpoint: String,
    pub model_tag: String,
    /// Stub embedding dimension.
    pub dim: usize,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub top_k: usize,
    pub threshold: f64,
    pub retrieve_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub tokenizer: String,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            store: StoreSection::default(),
            client: ClientSection::default(),
            pipeline: PipelineSection::default(),
            segment: SegmentSection::default(),
            run: RunSection::default(),
        }
    }
}

impl Default for StoreSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("ragforge.store"),
            collection: "default".into(),
        }
    }
}

impl Default for ClientSection {
    fn default() -> Self {
        Self {
            endpoint: "stub".into(),
            model_tag: "remote".into(),
            dim: 256,
            timeout_secs: 60,
        }
    }
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            top_k: 8,
            threshold: 0.35,
            retrieve_n: 32,
        }
    }
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            tokenizer: "wordpunct".into(),
            max_tokens: ragforge::segmentation::DEFAULT_MAX_TOKENS,
        }
    }
}

/// Values that can come from flags or the environment. `None` leaves the
/// lower layer in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub collection: Option<String>,
    pub endpoint: Option<String>,
    pub model_tag: Option<String>,
    pub dim: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub top_k: Option<usize>,
    pub threshold: Option<f64>,
    pub retrieve_n: Option<usize>,
    pub tokenizer: Option<String>,
    pub max_tokens: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Environment variable names, suffixes of [`ENV_PREFIX`], with help text.
pub const ENV_VARS: &[(&str, &str)] = &[
    ("CONFIG", "path of the TOML config file"),
    ("STORE", "vector store file (store.path)"),
    ("COLLECTION", "collection name (store.collection)"),
    ("ENDPOINT", "model endpoint URL or \"stub\" (client.endpoint)"),
    ("MODEL_TAG", "model tag for remote endpoints (client.model_tag)"),
    ("DIM", "stub embedding dimension (client.dim)"),
    ("TIMEOUT_SECS", "remote request timeout (client.timeout_secs)"),
    ("TOP_K", "chunks kept after rerank (pipeline.top_k)"),
    ("THRESHOLD", "similarity threshold (pipeline.threshold)"),
    ("RETRIEVE_N", "vector candidates before rerank (pipeline.retrieve_n)"),
    ("TOKENIZER", "wordpunct or whitespace (segment.tokenizer)"),
    ("MAX_TOKENS", "chunk token budget (segment.max_tokens)"),
    ("SEED", "seed for every random choice (run.seed)"),
    ("JOBS", "worker threads (run.jobs)"),
];

fn parse_var<T: std::str::FromStr>(name: &str, raw: Option<String>) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    raw.map(|v| {
        v.trim()
            .parse::<T>()
            .map_err(|e| anyhow::anyhow!("{ENV_PREFIX}{name}={v:?}: {e}"))
    })
    .transpose()
}

impl Overrides {
    /// Reads `RAGFORGE_*` values through `get`, which takes the full name.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let var = |name: &str| get(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        Ok(Self {
            store: var("STORE").map(PathBuf::from),
            collection: var("COLLECTION"),
            endpoint: var("ENDPOINT"),
            model_tag: var("MODEL_TAG"),
            dim: parse_var("DIM", var("DIM"))?,
            timeout_secs: parse_var("TIMEOUT_SECS", var("TIMEOUT_SECS"))?,
            top_k: parse_var("TOP_K", var("TOP_K"))?,
            threshold: parse_var("THRESHOLD", var("THRESHOLD"))?,
            retrieve_n: parse_var("RETRIEVE_N", var("RETRIEVE_N"))?,
            tokenizer: var("TOKENIZER"),
            max_tokens: parse_var("MAX_TOKENS", var("MAX_TOKENS"))?,
            seed: parse_var("SEED", var("SEED"))?,
            jobs: parse_var("JOBS", var("JOBS"))?,
        })
    }

    pub fn apply(&self, c: &mut AppConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut c.store.path, &self.store);
        set(&mut c.store.collection, &self.collection);
        set(&mut c.client.endpoint, &self.endpoint);
        set(&mut c.client.model_tag, &self.model_tag);
        set(&mut c.client.dim, &self.dim);
        set(&mut c.client.timeout_secs, &self.timeout_secs);
        set(&mut c.pipeline.top_k, &self.top_k);
        set(&mut c.pipeline.threshold, &self.threshold);
        set(&mut c.pipeline.retrieve_n, &self.retrieve_n);
        set(&mut c.segment.tokenizer, &self.tokenizer);
        set(&mut c.segment.max_tokens, &self.max_tokens);
        if self.seed.is_some() {
            c.run.seed = self.seed;
        }
        if self.jobs.is_some() {
            c.run.jobs = self.jobs;
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    /// Defaults, then the file, then the environment, then the flags.
    pub fn resolve(file: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<Self> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        env.apply(&mut config);
        flags.apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        if p.top_k == 0 || p.top_k > p.retrieve_n {
            bail!("need 1 <= top_k <= retrieve_n, got top_k={} retrieve_n={}", p.top_k, p.retrieve_n);
        }
        if !(-1.0..=1.0).contains(&p.threshold) {
            bail!("threshold {} outside [-1, 1]", p.threshold);
        }
        if self.client.dim == 0 {
            bail!("client.dim must be positive");
        }
        if self.run.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        if !matches!(self.segment.tokenizer.as_str(), "wordpunct" | "whitespace") {
            bail!("unknown tokenizer {:?} (expected wordpunct or whitespace)", self.segment.tokenizer);
        }
        if self.client.endpoint.is_empty() {
            bail!("client.endpoint must not be empty");
        }
        Ok(())
    }
}
