//! Contrastive training objectives over a toy linear encoder.
//!
//! * `phi(q, d) = exp(cos(h_q, h_d) / tau)`
//! * InfoNCE: `-log(phi(q, d+) / (phi(q, d+) + sum_i phi(q, n_i)))`
//! * Matryoshka: mean InfoNCE over prefix-truncated embeddings (the cosine
//!   renormalizes each prefix).
//! * MNR: softmax cross-entropy of the positive among the positive and the
//!   negatives over raw scores, averaged over the batch. This is the
//!   standard multiple-negatives ranking loss; it is minimized by raising the
//!   positive's probability.
//!
//! Gradients are analytic and flow through the encoder `h = W x`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{render_instructed_query, trigram_features};
use crate::mining::TrainingPair;
use crate::text::fnv1a64;

pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum TrainingError {
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("temperature must be positive, got {0}")]
    InvalidTau(f64),
    #[error("invalid matryoshka dims: {0}")]
    InvalidDims(String),
    #[error("embedding length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("loss diverged at step {step}")]
    Divergence { step: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, TrainingError> {
    if a.len() != b.len() {
        return Err(TrainingError::LengthMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(TrainingError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

fn check_tau(tau: f64) -> Result<(), TrainingError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(TrainingError::InvalidTau(tau))
    }
}

pub fn phi(q: &[f64], d: &[f64], tau: f64) -> Result<f64, TrainingError> {
    check_tau(tau)?;
    Ok((cosine(q, d)? / tau).exp())
}

fn logsumexp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of index 0 among `scores`, and its gradient w.r.t. scores.
fn softmax_ce(scores: &[f64]) -> (f64, Vec<f64>) {
    let lse = logsumexp(scores);
    let mut g: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    g[0] -= 1.0;
    (lse - scores[0], g)
}

/// Loss and gradients of one contrastive example, w.r.t. the query and
/// each candidate (`cands[0]` is the positive).
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleGrad {
    pub loss: f64,
    pub query: Vec<f64>,
    pub cands: Vec<Vec<f64>>,
}

/// d cos(a, b) / d a
fn dcos_da(a: &[f64], b: &[f64], cos: f64) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect()
}

pub fn infonce_grad(q: &[f64], cands: &[&[f64]], tau: f64) -> Result<ExampleGrad, TrainingError> {
    check_tau(tau)?;
    let mut out = ExampleGrad {
        loss: 0.0,
        query: vec![0.0; q.len()],
        cands: cands.iter().map(|c| vec![0.0; c.len()]).collect(),
    };
    if cands.len() < 2 {
        cosine(q, cands.first().copied().unwrap_or(q))?;
        return Ok(out);
    }
    let cos = cands.iter().map(|c| cosine(q, c)).collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = cos.iter().map(|c| c / tau).collect();
    let (loss, g) = softmax_ce(&scores);
    out.loss = loss;
    for (j, c) in cands.iter().enumerate() {
        let w = g[j] / tau;
        for (acc, v) in out.query.iter_mut().zip(dcos_da(q, c, cos[j])) {
            *acc += w * v;
        }
        for (acc, v) in out.cands[j].iter_mut().zip(dcos_da(c, q, cos[j])) {
            *acc += w * v;
        }
    }
    Ok(out)
}

pub fn infonce_loss(q: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64, TrainingError> {
    let cands: Vec<&[f64]> = std::iter::once(positive).chain(negatives.iter().copied()).collect();
    infonce_grad(q, &cands, tau).map(|g| g.loss)
}

pub fn validate_dims(dims: &[usize], d: usize) -> Result<(), TrainingError> {
    if dims.is_empty() {
        return Err(TrainingError::InvalidDims("no dims given".into()));
    }
    if dims[0] == 0 || dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainingError::InvalidDims(format!("{dims:?} must be positive and strictly increasing")));
    }
    if let Some(&last) = dims.last().filter(|&&m| m > d) {
        return Err(TrainingError::InvalidDims(format!("{last} exceeds embedding dimension {d}")));
    }
    Ok(())
}

pub fn matryoshka_grad(q: &[f64], cands: &[&[f64]], tau: f64, dims: &[usize]) -> Result<ExampleGrad, TrainingError> {
    validate_dims(dims, q.len())?;
    let mut out = ExampleGrad {
        loss: 0.0,
        query: vec![0.0; q.len()],
        cands: cands.iter().map(|c| vec![0.0; c.len()]).collect(),
    };
    let k = dims.len() as f64;
    for &m in dims {
        let truncated: Vec<&[f64]> = cands.iter().map(|c| &c[..m]).collect();
        let g = infonce_grad(&q[..m], &truncated, tau)?;
        out.loss += g.loss / k;
        for (acc, v) in out.query.iter_mut().zip(&g.query) {
            *acc += v / k;
        }
        for (acc_c, gc) in out.cands.iter_mut().zip(&g.cands) {
            for (acc, v) in acc_c.iter_mut().zip(gc) {
                *acc += v / k;
            }
        }
    }
    Ok(out)
}

pub fn matryoshka_infonce(
    q: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
    dims: &[usize],
) -> Result<f64, TrainingError> {
    let cands: Vec<&[f64]> = std::iter::once(positive).chain(negatives.iter().copied()).collect();
    matryoshka_grad(q, &cands, tau, dims).map(|g| g.loss)
}

/// Raw reranker scores for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankBatch {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

/// Mean softmax cross-entropy of the positive over a batch of queries.
pub fn mnr_loss(batch: &[RerankBatch]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch
        .iter()
        .map(|b| {
            let scores: Vec<f64> = std::iter::once(b.positive).chain(b.negatives.iter().copied()).collect();
            softmax_ce(&scores).0
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Per-candidate softmax probabilities (positive first).
pub fn mnr_probabilities(b: &RerankBatch) -> Vec<f64> {
    let scores: Vec<f64> = std::iter::once(b.positive).chain(b.negatives.iter().copied()).collect();
    let lse = logsumexp(&scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

/// MNR over dot-product scores `h_q . h_c`, for one example.
pub fn mnr_grad(q: &[f64], cands: &[&[f64]]) -> ExampleGrad {
    let scores: Vec<f64> = cands.iter().map(|c| dot(q, c)).collect();
    let (loss, g) = softmax_ce(&scores);
    let mut gq = vec![0.0; q.len()];
    let mut gc = Vec::with_capacity(cands.len());
    for (j, c) in cands.iter().enumerate() {
        for (acc, v) in gq.iter_mut().zip(c.iter()) {
            *acc += g[j] * v;
        }
        gc.push(q.iter().map(|v| g[j] * v).collect());
    }
    ExampleGrad { loss, query: gq, cands: gc }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Infonce,
    Mnr,
    Matryoshka,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "infonce" => Ok(Self::Infonce),
            "mnr" => Ok(Self::Mnr),
            "matryoshka" => Ok(Self::Matryoshka),
            other => Err(format!("unknown loss {other:?} (expected infonce, mnr or matryoshka)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub tau: f64,
    /// Prefix dims for the Matryoshka loss; ignored otherwise.
    pub dims: Vec<usize>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Infonce,
            tau: DEFAULT_TAU,
            dims: Vec::new(),
        }
    }
}

impl LossSpec {
    fn example_grad(&self, q: &[f64], cands: &[&[f64]]) -> Result<ExampleGrad, TrainingError> {
        match self.kind {
            LossKind::Infonce => infonce_grad(q, cands, self.tau),
            LossKind::Matryoshka => matryoshka_grad(q, cands, self.tau, &self.dims),
            LossKind::Mnr => Ok(mnr_grad(q, cands)),
        }
    }
}

/// Sparse feature vector: `(index, value)` pairs.
pub type Features = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub features: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: 32, features: 256 }
    }
}

/// `h = W x` with `W` a `dim x features` row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub dim: usize,
    pub features: usize,
    pub weights: Vec<f64>,
}

impl ToyEncoder {
    /// Gaussian init with entries of standard deviation `1/sqrt(dim)`.
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (config.dim as f64).sqrt()).expect("valid std");
        Self {
            dim: config.dim,
            features: config.features,
            weights: (0..config.dim * config.features).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    /// Hashed character-trigram features, L2-normalized.
    pub fn featurize(&self, text: &str) -> Features {
        let mut dense = vec![0.0f64; self.features];
        for f in trigram_features(text) {
            let h = fnv1a64(f.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            dense[(h % self.features as u64) as usize] += sign;
        }
        let n = norm(&dense);
        dense
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .map(|(i, v)| (i, v / n))
            .collect()
    }

    pub fn forward(&self, x: &Features) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for (r, out) in h.iter_mut().enumerate() {
            let row = &self.weights[r * self.features..(r + 1) * self.features];
            *out = x.iter().map(|&(i, v)| row[i] * v).sum();
        }
        h
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.forward(&self.featurize(text))
    }

    fn accumulate(&self, grad: &mut [f64], g_h: &[f64], x: &Features) {
        for (r, gr) in g_h.iter().enumerate() {
            if *gr == 0.0 {
                continue;
            }
            let row = &mut grad[r * self.features..(r + 1) * self.features];
            for &(i, v) in x {
                row[i] += gr * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub query: Features,
    pub positive: Features,
    pub negatives: Vec<Features>,
}

impl EncodedExample {
    /// Query side uses the instructed form; documents are plain.
    pub fn from_pair(encoder: &ToyEncoder, pair: &TrainingPair) -> Self {
        Self {
            query: encoder.featurize(&render_instructed_query(&pair.instruction, &pair.query)),
            positive: encoder.featurize(&pair.positive.text),
            negatives: pair.negatives.iter().map(|n| encoder.featurize(&n.text)).collect(),
        }
    }
}

/// Mean loss over `batch` and its gradient w.r.t. the encoder weights. With
/// `in_batch_negatives`, the other examples' positives join each example's
/// negatives.
pub fn batch_loss_grad(
    encoder: &ToyEncoder,
    batch: &[&EncodedExample],
    spec: &LossSpec,
    in_batch_negatives: bool,
) -> Result<(f64, Vec<f64>), TrainingError> {
    if spec.kind != LossKind::Mnr {
        check_tau(spec.tau)?;
    }
    if spec.kind == LossKind::Matryoshka {
        validate_dims(&spec.dims, encoder.dim)?;
    }
    let n = batch.len();
    let mut grad = vec![0.0; encoder.weights.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let hq: Vec<Vec<f64>> = batch.iter().map(|e| encoder.forward(&e.query)).collect();
    let hp: Vec<Vec<f64>> = batch.iter().map(|e| encoder.forward(&e.positive)).collect();
    let hn: Vec<Vec<Vec<f64>>> = batch
        .iter()
        .map(|e| e.negatives.iter().map(|x| encoder.forward(x)).collect())
        .collect();

    let mut gq = vec![vec![0.0; encoder.dim]; n];
    let mut gp = vec![vec![0.0; encoder.dim]; n];
    let mut gn: Vec<Vec<Vec<f64>>> = hn.iter().map(|v| vec![vec![0.0; encoder.dim]; v.len()]).collect();
    let mut total = 0.0;
    let scale = 1.0 / n as f64;

    for i in 0..n {
        let mut cands: Vec<&[f64]> = vec![&hp[i]];
        cands.extend(hn[i].iter().map(Vec::as_slice));
        let others: Vec<usize> = if in_batch_negatives { (0..n).filter(|&j| j != i).collect() } else { Vec::new() };
        cands.extend(others.iter().map(|&j| hp[j].as_slice()));
        let g = spec.example_grad(&hq[i], &cands)?;
        total += g.loss * scale;
        let add = |acc: &mut Vec<f64>, v: &[f64]| acc.iter_mut().zip(v).for_each(|(a, b)| *a += b * scale);
        add(&mut gq[i], &g.query);
        add(&mut gp[i], &g.cands[0]);
        let k = hn[i].len();
        for t in 0..k {
            add(&mut gn[i][t], &g.cands[1 + t]);
        }
        for (slot, &j) in others.iter().enumerate() {
            add(&mut gp[j], &g.cands[1 + k + slot]);
        }
    }

    for i in 0..n {
        encoder.accumulate(&mut grad, &gq[i], &batch[i].query);
        encoder.accumulate(&mut grad, &gp[i], &batch[i].positive);
        for (t, x) in batch[i].negatives.iter().enumerate() {
            encoder.accumulate(&mut grad, &gn[i][t], x);
        }
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub encoder: EncoderConfig,
    pub steps: usize,
    pub lr: f64,
    /// Batches at least as large as the dataset use the whole dataset.
    pub batch_size: usize,
    pub in_batch_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::default(),
            encoder: EncoderConfig::default(),
            steps: 500,
            lr: 0.05,
            batch_size: 16,
            in_batch_negatives: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    /// Batch loss before each step's update.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

/// Seeded SGD from a fresh encoder.
pub fn train_toy(examples: &[EncodedExample], config: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    let encoder = ToyEncoder::new(config.encoder, config.seed);
    train_from(encoder, examples, config)
}

pub fn train_from(
    mut encoder: ToyEncoder,
    examples: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainingError> {
    if examples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) || config.batch_size == 0 {
        return Err(TrainingError::Config(format!(
            "need lr > 0 and batch_size >= 1, got lr={} batch_size={}",
            config.lr, config.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7EA1);
    let full = config.batch_size >= examples.len();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<&EncodedExample> = if full {
            examples.iter().collect()
        } else {
            index::sample(&mut rng, examples.len(), config.batch_size)
                .into_iter()
                .map(|i| &examples[i])
                .collect()
        };
        let (loss, grad) = batch_loss_grad(&encoder, &batch, &config.loss, config.in_batch_negatives)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainingError::Divergence { step });
        }
        losses.push(loss);
        for (w, g) in encoder.weights.iter_mut().zip(&grad) {
            *w -= config.lr * g;
        }
    }
    Ok(TrainOutcome { encoder, losses })
}


/// Two-cluster synthetic corpus for the toy trainer.
///
/// Four disjoint letter alphabets give four disjoint vocabularies: query
/// words and document words of cluster 0, then of cluster 1. Queries share
/// no trigram with any document, so an untrained encoder ranks documents of
/// both clusters alike and cluster-level recall@1 starts near 0.5. The
/// trainer has to learn which query vocabulary goes with which document
/// vocabulary. Train it with `in_batch_negatives` off, since half of any
/// batch's other positives share the query's cluster.
pub mod two_cluster {
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::ToyEncoder;
    use crate::mining::{NegativeSource, Negative, PairDoc, TaskType, TrainingPair};

    const ALPHABETS: [&[u8]; 4] = [b"abcde", b"fghij", b"klmno", b"pqrst"];
    const VOCAB: usize = 40;
    const QUERY_WORDS: usize = 4;
    const DOC_WORDS: usize = 8;

    /// A text and the cluster it belongs to.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Labeled {
        pub text: String,
        pub cluster: usize,
    }

    #[derive(Debug, Clone)]
    pub struct Corpus {
        pub train: Vec<TrainingPair>,
        pub queries: Vec<Labeled>,
        pub docs: Vec<Labeled>,
    }

    fn vocabulary(alphabet: &[u8], rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..VOCAB)
            .map(|_| {
                let len = rng.random_range(4..=7);
                (0..len).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
            })
            .collect()
    }

    fn sentence(vocab: &[String], words: usize, rng: &mut ChaCha8Rng) -> String {
        (0..words)
            .map(|_| vocab.choose(rng).unwrap().as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `per_cluster` training pairs and as many held-out queries and
    /// documents per cluster. Each pair has one negative from the other
    /// cluster.
    pub fn generate(per_cluster: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocabs: Vec<Vec<String>> = ALPHABETS.iter().map(|a| vocabulary(a, &mut rng)).collect();
        let query = |c: usize, rng: &mut ChaCha8Rng| sentence(&vocabs[2 * c], QUERY_WORDS, rng);
        let doc = |c: usize, rng: &mut ChaCha8Rng| sentence(&vocabs[2 * c + 1], DOC_WORDS, rng);

        let mut train = Vec::with_capacity(2 * per_cluster);
        for i in 0..2 * per_cluster {
            let c = i % 2;
            train.push(TrainingPair {
                query: query(c, &mut rng),
                instruction: String::new(),
                task_type: TaskType::Qa,
                positive: PairDoc { chunk_id: None, text: doc(c, &mut rng) },
                negatives: vec![Negative {
                    chunk_id: None,
                    text: doc(1 - c, &mut rng),
                    weak_score: None,
                    source: NegativeSource::Dataset,
                }],
                quality_label: None,
            });
        }
        let mut queries = Vec::new();
        let mut docs = Vec::new();
        for i in 0..2 * per_cluster {
            let c = i % 2;
            queries.push(Labeled { text: query(c, &mut rng), cluster: c });
            docs.push(Labeled { text: doc(c, &mut rng), cluster: c });
        }
        Corpus { train, queries, docs }
    }

    /// Share of queries whose nearest document by cosine is in the same
    /// cluster. Ties go to the earlier document.
    pub fn recall_at_1(encoder: &ToyEncoder, queries: &[Labeled], docs: &[Labeled]) -> f64 {
        let unit = |v: Vec<f64>| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let doc_vecs: Vec<Vec<f64>> = docs
            .iter()
            .map(|d| unit(encoder.embed(&d.text)))
            .collect();
        let hits = queries
            .iter()
            .filter(|q| {
                let qv = unit(encoder.embed(&crate::clients::render_instructed_query("", &q.text)));
                let mut best = (f64::NEG_INFINITY, 0);
                for (j, dv) in doc_vecs.iter().enumerate() {
                    let s: f64 = qv.iter().zip(dv).map(|(a, b)| a * b).sum();
                    if s > best.0 {
                        best = (s, j);
                    }
                }
                docs[best.1].cluster == q.cluster
            })
            .count();
        hits as f64 / queries.len().max(1) as f64
    }
}
