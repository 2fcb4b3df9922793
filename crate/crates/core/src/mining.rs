//! SimANS hard-negative mining.
//!
//! A weak retriever proposes candidates for each query; each candidate is
//! weighted by `exp(-sigma * (neg_score - pos_score)^2)`, which peaks at
//! candidates scored like the positive, and negatives are drawn without
//! replacement in proportion to those weights.

use std::collections::HashSet;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientError, EmbedSide, ModelClient};
use crate::pipeline::embed_query;
use crate::text::splitmix64;
use crate::vectorstore::{Collection, StoreError};

pub const DEFAULT_MIN_NEGATIVES: usize = 16;
pub const DEFAULT_POOL_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("candidate pool has {available} entries, need {needed} (short by {shortfall})")]
    Shortfall {
        available: usize,
        needed: usize,
        shortfall: usize,
    },
    #[error("corpus supplies {available} negatives for pair {index}, need {needed}")]
    CorpusTooSmall {
        index: usize,
        available: usize,
        needed: usize,
    },
    #[error("training pair line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Qa,
    Rerank,
    Sts,
}

impl TaskType {
    pub fn default_sigma(self) -> f64 {
        match self {
            TaskType::Qa => 1.0,
            TaskType::Rerank | TaskType::Sts => 3.0,
        }
    }
}

impl std::str::FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qa" => Ok(Self::Qa),
            "rerank" => Ok(Self::Rerank),
            "sts" => Ok(Self::Sts),
            other => Err(format!("unknown task type {other:?} (expected qa, rerank or sts)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub chunk_id: String,
    pub text: String,
    pub weak_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimansConfig {
    pub sigma: f64,
    pub min_negatives: usize,
    pub candidate_pool_size: usize,
}

impl SimansConfig {
    pub fn for_task(task: TaskType) -> Self {
        Self {
            sigma: task.default_sigma(),
            min_negatives: DEFAULT_MIN_NEGATIVES,
            candidate_pool_size: DEFAULT_POOL_SIZE,
        }
    }

    pub fn validate(&self) -> Result<(), MiningError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(MiningError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.min_negatives < 1 {
            return Err(MiningError::Config("min_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn simans_weight(neg_score: f64, pos_score: f64, sigma: f64) -> f64 {
    let d = neg_score - pos_score;
    (-sigma * d * d).exp()
}

/// Draws `config.min_negatives` candidates without replacement, each draw
/// proportional to the SimANS weight among the candidates still in the pool.
/// Weights are handled in log space so that far-off candidates never
/// underflow the whole pool to zero.
pub fn sample_negatives(
    pos_score: f64,
    candidates: &[ScoredCandidate],
    config: &SimansConfig,
    seed: u64,
) -> Result<Vec<ScoredCandidate>, MiningError> {
    config.validate()?;
    if !pos_score.is_finite() {
        return Err(MiningError::NonFinite(pos_score));
    }
    if let Some(c) = candidates.iter().find(|c| !c.weak_score.is_finite()) {
        return Err(MiningError::NonFinite(c.weak_score));
    }
    let needed = config.min_negatives;
    if candidates.len() < needed {
        return Err(MiningError::Shortfall {
            available: candidates.len(),
            needed,
            shortfall: needed - candidates.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_w: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let d = c.weak_score - pos_score;
            -config.sigma * d * d
        })
        .collect();
    let mut alive: Vec<usize> = (0..candidates.len()).collect();
    let mut out = Vec::with_capacity(needed);
    for _ in 0..needed {
        let max = alive.iter().map(|&i| log_w[i]).fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = alive.iter().map(|&i| (log_w[i] - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = alive.len() - 1;
        for (slot, p) in probs.iter().enumerate() {
            if u < *p {
                pick = slot;
                break;
            }
            u -= p;
        }
        let idx = alive.swap_remove(pick);
        log_w[idx] = f64::NEG_INFINITY;
        out.push(candidates[idx].clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    Dataset,
    Mined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Negative {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_score: Option<f64>,
    pub source: NegativeSource,
}

/// One line of the training-pair JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: String,
    pub instruction: String,
    pub task_type: TaskType,
    pub positive: PairDoc,
    #[serde(default)]
    pub negatives: Vec<Negative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_label: Option<u8>,
}

pub fn read_pairs(reader: impl BufRead) -> Result<Vec<TrainingPair>, MiningError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MiningError::Record {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningOptions {
    pub min_negatives: usize,
    /// `None` picks the task's default sigma.
    pub sigma: Option<f64>,
    pub candidate_pool_size: usize,
    pub seed: u64,
}

impl Default for MiningOptions {
    fn default() -> Self {
        Self {
            min_negatives: DEFAULT_MIN_NEGATIVES,
            sigma: None,
            candidate_pool_size: DEFAULT_POOL_SIZE,
            seed: 0,
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn mine_one(
    index: usize,
    pair: &TrainingPair,
    store: &Collection,
    client: &dyn ModelClient,
    options: &MiningOptions,
) -> Result<TrainingPair, MiningError> {
    if pair.negatives.len() >= options.min_negatives {
        return Ok(pair.clone());
    }
    let needed = options.min_negatives - pair.negatives.len();
    let config = SimansConfig {
        sigma: options.sigma.unwrap_or_else(|| pair.task_type.default_sigma()),
        min_negatives: needed,
        candidate_pool_size: options.candidate_pool_size,
    };
    config.validate()?;

    let qv = embed_query(client, &pair.instruction, &pair.query)?;
    let pv = client
        .embed(&[pair.positive.text.clone()], &EmbedSide::Document)?
        .pop()
        .ok_or_else(|| ClientError::Fatal("embedder returned no vector".into()))?;
    let pos_score = cosine(&qv, &pv.values);

    let mut excluded_ids: HashSet<&str> = HashSet::new();
    let mut excluded_texts: HashSet<&str> = HashSet::new();
    excluded_texts.insert(pair.positive.text.as_str());
    if let Some(id) = &pair.positive.chunk_id {
        excluded_ids.insert(id);
    }
    for n in &pair.negatives {
        excluded_texts.insert(&n.text);
        if let Some(id) = &n.chunk_id {
            excluded_ids.insert(id);
        }
    }

    let scope = store.all_partitions();
    let mut pool_size = config.candidate_pool_size.max(needed + excluded_ids.len() + 1);
    let seed = splitmix64(options.seed ^ index as u64);
    loop {
        let hits = store.search(&qv, pool_size.min(store.len().max(1)), f64::NEG_INFINITY, &scope)?;
        let mut seen_text: HashSet<String> = HashSet::new();
        let candidates: Vec<ScoredCandidate> = hits
            .into_iter()
            .filter(|h| !excluded_ids.contains(h.chunk_id.as_str()) && !excluded_texts.contains(h.payload.text.as_str()))
            .filter(|h| seen_text.insert(h.payload.text.clone()))
            .map(|h| ScoredCandidate {
                chunk_id: h.chunk_id,
                text: h.payload.text,
                weak_score: h.similarity,
            })
            .collect();
        match sample_negatives(pos_score, &candidates, &config, seed) {
            Ok(mined) => {
                let mut out = pair.clone();
                out.negatives.extend(mined.into_iter().map(|c| Negative {
                    chunk_id: Some(c.chunk_id),
                    text: c.text,
                    weak_score: Some(c.weak_score),
                    source: NegativeSource::Mined,
                }));
                return Ok(out);
            }
            Err(MiningError::Shortfall { available, .. }) => {
                if pool_size >= store.len() {
                    return Err(MiningError::CorpusTooSmall {
                        index,
                        available,
                        needed,
                    });
                }
                pool_size = store.len();
            }
            Err(e) => return Err(e),
        }
    }
}

/// Tops every pair up to `options.min_negatives` negatives. Dataset
/// negatives stay first and unchanged; mined ones follow.
pub fn mine_for_dataset(
    pairs: &[TrainingPair],
    store: &Collection,
    client: &dyn ModelClient,
    options: &MiningOptions,
) -> Result<Vec<TrainingPair>, MiningError> {
    if options.min_negatives < 1 {
        return Err(MiningError::Config("min_negatives must be at least 1".into()));
    }
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| mine_one(i, p, store, client, options))
        .collect()
}
