//! Synthetic QA training data: typed query generation with few-shot
//! injection, answer rewriting, distractor contexts, unanswerable mixing,
//! quality filtering and DPO pairs.
//!
//! Records are line-delimited JSON. A [`SynthExample`] line has the fields
//! `id`, `question`, `answer`, `contexts` (each `{chunk_id, text, role}` with
//! role `"positive"` or `"distractor"`), `answerable`, `query_type`,
//! `quality_label` (null until judged) and `source_doc_id`. A [`DpoPair`]
//! line has `question`, `chosen`, `rejected` (each `{chunk_id, text}`),
//! `relevance_chosen` and `relevance_rejected`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{instructions, ClientError, JudgeKind, ModelClient};
use crate::pipeline::embed_query;
use crate::text::splitmix64;
use crate::vectorstore::{Collection, StoreError};
use crate::REFUSAL;

pub const DEFAULT_DISTRACTORS: usize = 3;
pub const DEFAULT_RATIO: usize = 7;
pub const FEW_SHOT_K: usize = 3;
pub const DPO_THRESHOLD: f64 = 0.4;
/// Unanswerable contexts come from chunks ranked past this position.
pub const LOW_RELEVANCE_RANK: usize = 50;

pub mod prompts {
    //! Prompt templates, reproduced verbatim.

    use super::QueryType;

    pub const GENERATION_INSTRUCTION_HEAD: &str = "Instruction: Given the next [document], create a [question] and [answer] pair that are grounded in the main point of the document, don't add any additional information that is not in the document and ";
    pub const GENERATION_INSTRUCTION_TAIL: &str = ". The [question] is by an information-seeking user and the [answer] is provided by a helping AI Agent.";
    pub const GENERATION_REFER: &str = "Refer to the following question format and corresponding answers. Your output should consist solely of question-answer pairs.";
    pub const QUESTION_TAG: &str = "[question]";
    pub const ANSWER_TAG: &str = "[answer] ";
    pub const DOCUMENT_MARKER: &str = "[document]: ";
    pub const RESPONSE_MARKER: &str = "### Response:";

    pub const REWRITE_PREAMBLE: &str = "Here is a task involving RAG (Retrieval Augmented Generation) for question answering. I will provide you some documents(denoted as [References]), a question (denoted as [Query]) related to the documents, and the corresponding original answer (denoted as [Short Answer]). You are required to expand the content of the answer, with the following requirements:
1. Your generated answer should contain 6 to 8 sentences.
2. Your generated answer should have exactly the same meaning as the [Short Answer] and must perfectly address the [Query] without deviating.
3. The content of your generated answer should fully utilize the content from the [References], and you must not fabricate any facts.";
    pub const REFERENCES_HEADER: &str = "[References]\n";
    pub const QUERY_HEADER: &str = "[Query]\n";
    pub const SHORT_ANSWER_HEADER: &str = "[Short Answer]\n";
    pub const REWRITE_NOTE: &str = "\n\nPlease note that do not output content other than the generated new answer.";
    pub const REWRITE_TAIL: &str = "Your generated new answer is";

    pub fn query_type_clause(t: QueryType) -> String {
        match t.question_word() {
            Some(w) => format!("The question should use [{w}]\u{2026} to ask"),
            None if t == QueryType::General => "Please ask in general form.".to_string(),
            None => "Use imperative sentences to prompt the text.".to_string(),
        }
    }

    /// `shots` are `(question, answer)` pairs, rendered in order.
    pub fn build_generation_prompt(document: &str, query_type: QueryType, shots: &[(&str, &str)]) -> String {
        let clause = query_type_clause(query_type);
        let clause = clause.strip_suffix('.').unwrap_or(&clause);
        let mut p = String::new();
        p.push_str(GENERATION_INSTRUCTION_HEAD);
        p.push_str(clause);
        p.push_str(GENERATION_INSTRUCTION_TAIL);
        p.push('\n');
        p.push_str(GENERATION_REFER);
        p.push_str("\n\n");
        for (q, a) in shots {
            p.push_str(QUESTION_TAG);
            p.push_str(q);
            p.push_str("\n\n");
            p.push_str(ANSWER_TAG);
            p.push_str(a);
            p.push_str("\n\n");
        }
        p.push_str(DOCUMENT_MARKER);
        p.push_str(document);
        p.push_str("\n\n");
        p.push_str(RESPONSE_MARKER);
        p
    }

    pub fn build_rewrite_prompt(references: &[&str], query: &str, short_answer: &str) -> String {
        let mut p = String::new();
        p.push_str(REWRITE_PREAMBLE);
        p.push_str("\n\n");
        p.push_str(REFERENCES_HEADER);
        p.push_str(&references.join("\n\n"));
        p.push_str("\n\n");
        p.push_str(QUERY_HEADER);
        p.push_str(query);
        p.push_str("\n\n");
        p.push_str(SHORT_ANSWER_HEADER);
        p.push_str(short_answer);
        p.push_str(REWRITE_NOTE);
        p.push(' ');
        p.push_str(REWRITE_TAIL);
        p
    }
}

pub use prompts::{build_generation_prompt, build_rewrite_prompt};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("few-shot library has {available} {query_type:?} examples, need {needed}")]
    FewShotShortage {
        query_type: QueryType,
        available: usize,
        needed: usize,
    },
    #[error("few-shot library line {line}: {reason}")]
    Library { line: usize, reason: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("store supplied {got} distractors for {id}, need {needed}")]
    DistractorShortage { id: String, got: usize, needed: usize },
    #[error("generator output for {id} has no [question]/[answer] pair")]
    Unparseable { id: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    What,
    Which,
    Who,
    When,
    Where,
    How,
    Why,
    General,
    Imperative,
}

impl QueryType {
    pub const ALL: [QueryType; 9] = [
        QueryType::What,
        QueryType::Which,
        QueryType::Who,
        QueryType::When,
        QueryType::Where,
        QueryType::How,
        QueryType::Why,
        QueryType::General,
        QueryType::Imperative,
    ];

    pub fn question_word(self) -> Option<&'static str> {
        match self {
            QueryType::What => Some("What"),
            QueryType::Which => Some("Which"),
            QueryType::Who => Some("Who/Whose"),
            QueryType::When => Some("When"),
            QueryType::Where => Some("Where"),
            QueryType::How => Some("How"),
            QueryType::Why => Some("Why"),
            QueryType::General | QueryType::Imperative => None,
        }
    }
}

pub fn sample_query_type<R: Rng + ?Sized>(rng: &mut R) -> QueryType {
    QueryType::ALL[rng.random_range(0..QueryType::ALL.len())]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub query_type: QueryType,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Default)]
pub struct FewShotLibrary {
    by_type: BTreeMap<QueryType, Vec<FewShot>>,
}

impl FewShotLibrary {
    pub fn new(shots: impl IntoIterator<Item = FewShot>) -> Self {
        let mut by_type: BTreeMap<QueryType, Vec<FewShot>> = BTreeMap::new();
        for s in shots {
            by_type.entry(s.query_type).or_default().push(s);
        }
        Self { by_type }
    }

    /// Reads `{query_type, question, answer}` JSON lines.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, SynthError> {
        let mut shots = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let shot: FewShot = serde_json::from_str(&line).map_err(|e| SynthError::Library {
                line: i + 1,
                reason: e.to_string(),
            })?;
            shots.push(shot);
        }
        Ok(Self::new(shots))
    }

    pub fn of_type(&self, t: QueryType) -> &[FewShot] {
        self.by_type.get(&t).map_or(&[], Vec::as_slice)
    }
}

/// `k` distinct shots of type `t`, drawn uniformly without replacement.
pub fn pick_few_shots<R: Rng + ?Sized>(
    t: QueryType,
    library: &FewShotLibrary,
    rng: &mut R,
    k: usize,
) -> Result<Vec<FewShot>, SynthError> {
    let pool = library.of_type(t);
    if pool.len() < k {
        return Err(SynthError::FewShotShortage {
            query_type: t,
            available: pool.len(),
            needed: k,
        });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextRole {
    Positive,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub chunk_id: String,
    pub text: String,
    pub role: ContextRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthExample {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub contexts: Vec<ContextChunk>,
    pub answerable: bool,
    pub query_type: QueryType,
    pub quality_label: Option<u8>,
    pub source_doc_id: String,
}

impl SynthExample {
    pub fn positive(&self) -> Option<&ContextChunk> {
        self.contexts.iter().find(|c| c.role == ContextRole::Positive)
    }

    /// Structural invariants: answerable examples carry exactly one positive
    /// context; unanswerable ones carry none and the refusal answer.
    pub fn is_consistent(&self) -> bool {
        let positives = self.contexts.iter().filter(|c| c.role == ContextRole::Positive).count();
        if self.answerable {
            positives == 1
        } else {
            positives == 0 && self.answer == REFUSAL
        }
    }
}

/// A chunk synthesis starts from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
}

/// Splits generator output into its `[question]` and `[answer]` parts.
pub fn parse_qa_output(text: &str) -> Option<(String, String)> {
    let q_start = text.find(prompts::QUESTION_TAG)? + prompts::QUESTION_TAG.len();
    let rest = &text[q_start..];
    let a_pos = rest.find("[answer]")?;
    let question = rest[..a_pos].trim().to_string();
    let answer = rest[a_pos + "[answer]".len()..].trim().to_string();
    (!question.is_empty() && !answer.is_empty()).then_some((question, answer))
}

pub fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ index as u64))
}

/// Generates a question/answer pair from `source` and rewrites the answer.
/// The returned example holds only its positive context.
pub fn generate_example<R: Rng + ?Sized>(
    source: &SourceChunk,
    library: &FewShotLibrary,
    client: &dyn ModelClient,
    rng: &mut R,
) -> Result<SynthExample, SynthError> {
    if source.text.trim().is_empty() {
        return Err(SynthError::EmptyInput("document"));
    }
    let query_type = sample_query_type(rng);
    let shots = pick_few_shots(query_type, library, rng, FEW_SHOT_K)?;
    let shot_refs: Vec<(&str, &str)> = shots.iter().map(|s| (s.question.as_str(), s.answer.as_str())).collect();
    let raw = client.generate(&build_generation_prompt(&source.text, query_type, &shot_refs))?;
    let (question, short) = parse_qa_output(&raw).ok_or_else(|| SynthError::Unparseable {
        id: source.chunk_id.clone(),
    })?;
    let answer = client.generate(&build_rewrite_prompt(&[&source.text], &question, &short))?;
    Ok(SynthExample {
        id: source.chunk_id.clone(),
        question,
        answer: answer.trim().to_string(),
        contexts: vec![ContextChunk {
            chunk_id: source.chunk_id.clone(),
            text: source.text.clone(),
            role: ContextRole::Positive,
        }],
        answerable: true,
        query_type,
        quality_label: None,
        source_doc_id: source.doc_id.clone(),
    })
}

/// Adds `distractor_count` retrieved non-positive chunks to `example` and
/// shuffles its contexts.
pub fn assemble_contexts<R: Rng + ?Sized>(
    mut example: SynthExample,
    store: &Collection,
    client: &dyn ModelClient,
    distractor_count: usize,
    rng: &mut R,
) -> Result<SynthExample, SynthError> {
    let positive = example
        .positive()
        .cloned()
        .ok_or(SynthError::EmptyInput("positive context"))?;
    let qv = embed_query(client, instructions::RETRIEVAL, &example.question)?;
    let scope = store.all_partitions();
    let mut top_n = (distractor_count * 4 + 8).min(store.len().max(1));
    let distractors = loop {
        let hits = store.search(&qv, top_n, f64::NEG_INFINITY, &scope)?;
        let mut seen = HashSet::new();
        let picked: Vec<ContextChunk> = hits
            .into_iter()
            .filter(|h| h.chunk_id != positive.chunk_id && h.payload.text != positive.text)
            .filter(|h| seen.insert(h.chunk_id.clone()))
            .take(distractor_count)
            .map(|h| ContextChunk {
                chunk_id: h.chunk_id,
                text: h.payload.text,
                role: ContextRole::Distractor,
            })
            .collect();
        if picked.len() == distractor_count || top_n >= store.len() {
            break picked;
        }
        top_n = store.len();
    };
    if distractors.len() < distractor_count {
        return Err(SynthError::DistractorShortage {
            id: example.id,
            got: distractors.len(),
            needed: distractor_count,
        });
    }
    example.contexts = std::iter::once(positive).chain(distractors).collect();
    example.contexts.shuffle(rng);
    Ok(example)
}

/// Converts one example per block of `ratio + 1` into an unanswerable one,
/// at a seeded position within the block. Its contexts are replaced by the
/// same number of chunks ranked past [`LOW_RELEVANCE_RANK`] for its question
/// (the lowest-ranked chunks when the store is too small), and its answer
/// by the refusal string. A trailing partial block is left answerable.
pub fn mix_unanswerable<R: Rng + ?Sized>(
    examples: Vec<SynthExample>,
    ratio: usize,
    store: &Collection,
    client: &dyn ModelClient,
    rng: &mut R,
) -> Result<Vec<SynthExample>, SynthError> {
    let block = ratio + 1;
    let mut out = Vec::with_capacity(examples.len());
    let scope = store.all_partitions();
    for chunk in examples.chunks(block) {
        let convert = (chunk.len() == block).then(|| rng.random_range(0..block));
        for (i, ex) in chunk.iter().enumerate() {
            if Some(i) != convert {
                out.push(ex.clone());
                continue;
            }
            let want = ex.contexts.len().max(1);
            let positive_ids: BTreeSet<&str> = ex
                .contexts
                .iter()
                .filter(|c| c.role == ContextRole::Positive)
                .map(|c| c.chunk_id.as_str())
                .collect();
            let qv = embed_query(client, instructions::RETRIEVAL, &ex.question)?;
            let ranked = store.search(&qv, store.len().max(1), f64::NEG_INFINITY, &scope)?;
            let eligible: Vec<_> = ranked
                .into_iter()
                .filter(|h| !positive_ids.contains(h.chunk_id.as_str()) && h.payload.doc_id != ex.source_doc_id)
                .collect();
            let low: Vec<_> = if eligible.len() >= LOW_RELEVANCE_RANK + want {
                let tail = &eligible[LOW_RELEVANCE_RANK..];
                rand::seq::index::sample(rng, tail.len(), want)
                    .into_iter()
                    .map(|k| tail[k].clone())
                    .collect()
            } else {
                eligible.iter().rev().take(want).cloned().collect()
            };
            if low.is_empty() {
                return Err(SynthError::DistractorShortage {
                    id: ex.id.clone(),
                    got: 0,
                    needed: want,
                });
            }
            out.push(SynthExample {
                answer: REFUSAL.to_string(),
                contexts: low
                    .into_iter()
                    .map(|h| ContextChunk {
                        chunk_id: h.chunk_id,
                        text: h.payload.text,
                        role: ContextRole::Distractor,
                    })
                    .collect(),
                answerable: false,
                quality_label: None,
                ..ex.clone()
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityOutcome {
    pub kept: Vec<SynthExample>,
    pub dropped: Vec<SynthExample>,
    /// Examples whose judge call failed or returned an invalid label.
    pub parked: Vec<(SynthExample, String)>,
}

/// Labels every example 0 to 3; label 0 is dropped, 1 to 3 kept.
pub fn quality_filter(examples: Vec<SynthExample>, judge: &dyn ModelClient) -> QualityOutcome {
    let judged: Vec<(SynthExample, Result<u8, String>)> = examples
        .into_par_iter()
        .map(|ex| {
            let context = ex.contexts.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n");
            let label = judge
                .judge(JudgeKind::Quality0to3, &[ex.question.clone(), ex.answer.clone(), context])
                .map_err(|e| e.to_string())
                .and_then(|v| {
                    if v.fract() == 0.0 && (0.0..=3.0).contains(&v) {
                        Ok(v as u8)
                    } else {
                        Err(format!("invalid quality label {v}"))
                    }
                });
            (ex, label)
        })
        .collect();
    let mut out = QualityOutcome::default();
    for (mut ex, label) in judged {
        match label {
            Ok(0) => {
                ex.quality_label = Some(0);
                out.dropped.push(ex);
            }
            Ok(l) => {
                ex.quality_label = Some(l);
                out.kept.push(ex);
            }
            Err(reason) => out.parked.push((ex, reason)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRef {
    pub chunk_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoPair {
    pub question: String,
    pub chosen: ContextRef,
    pub rejected: ContextRef,
    pub relevance_chosen: f64,
    pub relevance_rejected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoItem {
    pub question: String,
    pub candidates: Vec<ContextRef>,
}

/// Indices `(chosen, rejected)`: chosen is the highest score strictly above
/// `threshold`, rejected the lowest score strictly below chosen's. Ties go
/// to the lower index.
pub fn select_dpo_pair(scores: &[f64], threshold: f64) -> Option<(usize, usize)> {
    let chosen = (0..scores.len())
        .filter(|&i| scores[i] > threshold)
        .reduce(|a, b| if scores[b] > scores[a] { b } else { a })?;
    let rejected = (0..scores.len())
        .filter(|&i| scores[i] < scores[chosen])
        .reduce(|a, b| if scores[b] < scores[a] { b } else { a })?;
    Some((chosen, rejected))
}

pub fn build_dpo_pairs(
    items: &[DpoItem],
    judge: &dyn ModelClient,
    threshold: f64,
) -> Result<Vec<DpoPair>, SynthError> {
    let pairs: Vec<Option<DpoPair>> = items
        .par_iter()
        .map(|item| {
            let scores = item
                .candidates
                .iter()
                .map(|c| judge.judge(JudgeKind::Relevance01, &[item.question.clone(), c.text.clone()]))
                .collect::<Result<Vec<f64>, ClientError>>()?;
            Ok(select_dpo_pair(&scores, threshold).map(|(c, r)| DpoPair {
                question: item.question.clone(),
                chosen: item.candidates[c].clone(),
                rejected: item.candidates[r].clone(),
                relevance_chosen: scores[c],
                relevance_rejected: scores[r],
            }))
        })
        .collect::<Result<_, SynthError>>()?;
    Ok(pairs.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub distractors: usize,
    pub ratio: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            distractors: DEFAULT_DISTRACTORS,
            ratio: DEFAULT_RATIO,
            seed: 0,
        }
    }
}

/// Full run: generate and assemble per chunk in parallel, mix in
/// unanswerable examples, then quality-filter.
pub fn synthesize(
    sources: &[SourceChunk],
    library: &FewShotLibrary,
    store: &Collection,
    client: &dyn ModelClient,
    config: &SynthConfig,
) -> Result<QualityOutcome, SynthError> {
    let examples = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let mut rng = item_rng(config.seed, i);
            let ex = generate_example(src, library, client, &mut rng)?;
            assemble_contexts(ex, store, client, config.distractors, &mut rng)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x5EED_0F_u64));
    let mixed = mix_unanswerable(examples, config.ratio, store, client, &mut rng)?;
    Ok(quality_filter(mixed, client))
}
