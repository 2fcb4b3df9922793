//! Embedded, persistent, partitioned vector store with exact search.
//!
//! A [`Collection`] holds one partition per library: the reserved
//! `"public"` partition and one partition per user ID. Each partition keeps
//! its vectors in one contiguous `f32` buffer and is scanned in full, so
//! search results are exact. Cosine collections store unit vectors and score
//! with a dot product.
//!
//! # On-disk format (version 1)
//!
//! All integers little-endian. Strings are a `u32` byte length followed by
//! UTF-8 bytes.
//!
//! ```text
//! magic        8 bytes   "RAGVSTO\0"
//! version      u32       1
//! dimension    u32
//! metric       u8        0 = cosine, 1 = inner product
//! name         string
//! model_tag    string
//! partitions   u32       count, then per partition in key order:
//!   key        string
//!   records    u32       count, then per record in insertion order:
//!     chunk_id string
//!     payload  string    JSON {"doc_id","text","metadata"}
//!     vector   dimension x f32
//! ```
//!
//! Trailing bytes after the last record are a format error.

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Ordering;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PUBLIC_PARTITION: &str = "public";
pub const MAGIC: &[u8; 8] = b"RAGVSTO\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record {index}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("record {index}: vector has non-finite components")]
    NonFinite { index: usize },
    #[error("record {index}: zero vector cannot be stored under the cosine metric")]
    ZeroVector { index: usize },
    #[error("record {index}: produced by model {got}, collection holds {expected}")]
    ModelMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("query has dimension {got}, collection has {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("invalid partition key {0:?}")]
    InvalidPartition(String),
    #[error("top_n must be at least 1")]
    ZeroTopN,
    #[error("unsupported store format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt store file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    InnerProduct,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionKey(String);

impl PartitionKey {
    pub fn public() -> Self {
        Self(PUBLIC_PARTITION.to_string())
    }

    /// A user's partition. The reserved public key is not a valid user ID.
    pub fn user(user_id: &str) -> Result<Self, StoreError> {
        if user_id.is_empty() || user_id == PUBLIC_PARTITION {
            return Err(StoreError::InvalidPartition(user_id.to_string()));
        }
        Ok(Self(user_id.to_string()))
    }

    /// `"public"` maps to the public partition, anything else to a user.
    pub fn parse(value: &str) -> Result<Self, StoreError> {
        if value == PUBLIC_PARTITION {
            Ok(Self::public())
        } else {
            Self::user(value)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_public(&self) -> bool {
        self.0 == PUBLIC_PARTITION
    }
}

impl std::fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Payload {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub chunk_id: String,
    pub vector: Vec<f32>,
    /// Tag of the embedding model that produced `vector`.
    pub model: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk_id: String,
    pub similarity: f64,
    pub partition: PartitionKey,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default)]
struct Partition {
    ids: Vec<String>,
    payloads: Vec<Payload>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl Partition {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn upsert(&mut self, dim: usize, chunk_id: String, vector: Vec<f32>, payload: Payload) {
        match self.index.get(&chunk_id) {
            Some(&row) => {
                self.data[row * dim..(row + 1) * dim].copy_from_slice(&vector);
                self.payloads[row] = payload;
            }
            None => {
                self.index.insert(chunk_id.clone(), self.ids.len());
                self.ids.push(chunk_id);
                self.payloads.push(payload);
                self.data.extend_from_slice(&vector);
            }
        }
    }
}

/// Dot product with f64 accumulation over four interleaved lanes.
#[inline]
fn dot(a: &[f32], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += f64::from(a[4 * i + l]) * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += f64::from(a[i]) * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

/// Heap entry ordered so that the *worst* candidate is the heap maximum.
struct Hit<'a> {
    similarity: f64,
    chunk_id: &'a str,
    partition: &'a PartitionKey,
    row: usize,
}

/// `Less` means `a` ranks ahead of `b`: higher similarity, then smaller
/// chunk_id, then smaller partition key.
fn rank_order(a: &Hit<'_>, b: &Hit<'_>) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.chunk_id.cmp(b.chunk_id))
        .then_with(|| a.partition.cmp(b.partition))
}

impl PartialEq for Hit<'_> {
    fn eq(&self, other: &Self) -> bool {
        rank_order(self, other) == Ordering::Equal
    }
}
impl Eq for Hit<'_> {}
impl PartialOrd for Hit<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Hit<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self, other)
    }
}

#[derive(Debug, Clone)]
pub struct Collection {
    name: String,
    dimension: usize,
    metric: Metric,
    model_tag: String,
    partitions: BTreeMap<PartitionKey, Partition>,
}

impl Collection {
    pub fn new(name: &str, dimension: usize, metric: Metric, model_tag: &str) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            name: name.to_string(),
            dimension,
            metric,
            model_tag: model_tag.to_string(),
            partitions: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn partitions(&self) -> impl Iterator<Item = &PartitionKey> {
        self.partitions.keys()
    }

    pub fn len(&self) -> usize {
        self.partitions.values().map(Partition::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn partition_len(&self, key: &PartitionKey) -> usize {
        self.partitions.get(key).map_or(0, Partition::len)
    }

    pub fn contains(&self, key: &PartitionKey, chunk_id: &str) -> bool {
        self.partitions
            .get(key)
            .is_some_and(|p| p.index.contains_key(chunk_id))
    }

    /// Upserts a batch into `partition`, creating it when absent. The whole
    /// batch is validated before anything is written.
    pub fn insert(
        &mut self,
        partition: &PartitionKey,
        records: Vec<VectorRecord>,
    ) -> Result<usize, StoreError> {
        for (index, r) in records.iter().enumerate() {
            if r.vector.len() != self.dimension {
                return Err(StoreError::DimensionMismatch {
                    index,
                    expected: self.dimension,
                    got: r.vector.len(),
                });
            }
            if r.model != self.model_tag {
                return Err(StoreError::ModelMismatch {
                    index,
                    expected: self.model_tag.clone(),
                    got: r.model.clone(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite { index });
            }
            if self.metric == Metric::Cosine && l2_norm(&r.vector) == 0.0 {
                return Err(StoreError::ZeroVector { index });
            }
        }
        let n = records.len();
        let dim = self.dimension;
        let metric = self.metric;
        let part = self.partitions.entry(partition.clone()).or_default();
        for r in records {
            let vector = match metric {
                Metric::Cosine => {
                    let norm = l2_norm(&r.vector);
                    r.vector.iter().map(|v| (f64::from(*v) / norm) as f32).collect()
                }
                Metric::InnerProduct => r.vector,
            };
            part.upsert(dim, r.chunk_id, vector, r.payload);
        }
        Ok(n)
    }

    /// Exact top-`top_n` search over the partitions in `scope`, keeping
    /// results with similarity `>= score_threshold`. Ties break by ascending
    /// chunk_id. Unknown partitions in scope contribute nothing.
    pub fn search(
        &self,
        query: &[f32],
        top_n: usize,
        score_threshold: f64,
        scope: &[PartitionKey],
    ) -> Result<Vec<RetrievalResult>, StoreError> {
        if query.len() != self.dimension {
            return Err(StoreError::QueryDimension {
                expected: self.dimension,
                got: query.len(),
            });
        }
        if top_n == 0 {
            return Err(StoreError::ZeroTopN);
        }
        let mut q: Vec<f64> = query.iter().map(|&v| f64::from(v)).collect();
        if self.metric == Metric::Cosine {
            let norm = l2_norm(query);
            if norm == 0.0 {
                return Ok(Vec::new());
            }
            q.iter_mut().for_each(|v| *v /= norm);
        }

        let mut keys: Vec<&PartitionKey> = scope.iter().collect();
        keys.sort();
        keys.dedup();

        let dim = self.dimension;
        let mut heap: BinaryHeap<Hit<'_>> = BinaryHeap::with_capacity(top_n + 1);
        for key in keys {
            let Some((key, part)) = self.partitions.get_key_value(key) else {
                continue;
            };
            for (row, v) in part.data.chunks_exact(dim).enumerate() {
                let similarity = dot(v, &q);
                if similarity < score_threshold {
                    continue;
                }
                let hit = Hit {
                    similarity,
                    chunk_id: &part.ids[row],
                    partition: key,
                    row,
                };
                if heap.len() < top_n {
                    heap.push(hit);
                } else if let Some(worst) = heap.peek() {
                    if rank_order(&hit, worst) == Ordering::Less {
                        heap.pop();
                        heap.push(hit);
                    }
                }
            }
        }

        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|h| RetrievalResult {
                chunk_id: h.chunk_id.to_string(),
                similarity: h.similarity,
                partition: h.partition.clone(),
                payload: self.partitions[h.partition].payloads[h.row].clone(),
            })
            .collect())
    }

    /// Every partition key, for whole-store scans.
    pub fn all_partitions(&self) -> Vec<PartitionKey> {
        self.partitions.keys().cloned().collect()
    }

    /// Writes the collection atomically (temp file + rename).
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(64 + self.len() * (self.dimension * 4 + 64));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        buf.push(match self.metric {
            Metric::Cosine => 0,
            Metric::InnerProduct => 1,
        });
        put_str(&mut buf, &self.name);
        put_str(&mut buf, &self.model_tag);
        buf.extend_from_slice(&(self.partitions.len() as u32).to_le_bytes());
        for (key, part) in &self.partitions {
            put_str(&mut buf, key.as_str());
            buf.extend_from_slice(&(part.len() as u32).to_le_bytes());
            for row in 0..part.len() {
                put_str(&mut buf, &part.ids[row]);
                let payload = serde_json::to_string(&part.payloads[row])
                    .map_err(|e| StoreError::Format(e.to_string()))?;
                put_str(&mut buf, &payload);
                for v in &part.data[row * self.dimension..(row + 1) * self.dimension] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }

        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(StoreError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(StoreError::Version { found: version });
        }
        let dimension = r.u32()? as usize;
        if dimension == 0 {
            return Err(StoreError::Format("zero dimension".into()));
        }
        let metric = match r.take(1)?[0] {
            0 => Metric::Cosine,
            1 => Metric::InnerProduct,
            m => return Err(StoreError::Format(format!("unknown metric {m}"))),
        };
        let name = r.string()?;
        let model_tag = r.string()?;
        let mut collection = Collection::new(&name, dimension, metric, &model_tag);
        let n_parts = r.u32()?;
        for _ in 0..n_parts {
            let key = PartitionKey::parse(&r.string()?)
                .map_err(|e| StoreError::Format(e.to_string()))?;
            let n_records = r.u32()? as usize;
            let mut part = Partition::default();
            for _ in 0..n_records {
                let chunk_id = r.string()?;
                let payload: Payload = serde_json::from_str(&r.string()?)
                    .map_err(|e| StoreError::Format(format!("payload: {e}")))?;
                let raw = r.take(dimension * 4)?;
                let vector: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                if part.index.contains_key(&chunk_id) {
                    return Err(StoreError::Format(format!("duplicate chunk_id {chunk_id}")));
                }
                part.upsert(dimension, chunk_id, vector, payload);
            }
            if collection.partitions.insert(key, part).is_some() {
                return Err(StoreError::Format("duplicate partition".into()));
            }
        }
        if r.pos != bytes.len() {
            return Err(StoreError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(collection)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| StoreError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String, StoreError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| StoreError::Format(e.to_string()))
    }
}

/// Collection shared between concurrent readers. Each insert batch is
/// applied under the write lock, so a search sees all of it or none of it.
#[derive(Debug, Clone)]
pub struct SharedCollection(Arc<RwLock<Collection>>);

impl SharedCollection {
    pub fn new(collection: Collection) -> Self {
        Self(Arc::new(RwLock::new(collection)))
    }

    pub fn insert(
        &self,
        partition: &PartitionKey,
        records: Vec<VectorRecord>,
    ) -> Result<usize, StoreError> {
        self.0.write().insert(partition, records)
    }

    pub fn search(
        &self,
        query: &[f32],
        top_n: usize,
        score_threshold: f64,
        scope: &[PartitionKey],
    ) -> Result<Vec<RetrievalResult>, StoreError> {
        self.0.read().search(query, top_n, score_threshold, scope)
    }

    pub fn read(&self) -> parking_lot::RwLockReadGuard<'_, Collection> {
        self.0.read()
    }
}
