//! Retrieval and answer metrics: top-k recall, per-type retrieval coverage
//! and answer recall, with JSON and Markdown reports.
//!
//! Eval sets are line-delimited JSON, one [`EvalItem`] per line:
//! `{question, reference_answer, reference_statements, gold_chunk_ids,
//! gold_doc_ids?, qa_type}` with `qa_type` one of `single_simple`,
//! `single_inference`, `multi_doc`, `conditional`. A result counts as a hit
//! when its chunk is in `gold_chunk_ids` or its document is in
//! `gold_doc_ids` (doc-level gold).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{JudgeKind, ModelClient};
use crate::pipeline::{answer_query, rank, PipelineConfig, PipelineError};
use crate::text::normalize_for_match;
use crate::vectorstore::Collection;

pub const DEFAULT_KS: [usize; 6] = [1, 3, 5, 8, 32, 64];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval set line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("report invariant violated: {0}")]
    Invariant(String),
    #[error("ks must be non-empty and positive")]
    BadKs,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaType {
    SingleSimple,
    SingleInference,
    MultiDoc,
    Conditional,
}

impl QaType {
    pub const ALL: [QaType; 4] = [QaType::SingleSimple, QaType::SingleInference, QaType::MultiDoc, QaType::Conditional];

    pub fn label(self) -> &'static str {
        match self {
            QaType::SingleSimple => "Single-document simple QA",
            QaType::SingleInference => "Single-document inference QA",
            QaType::MultiDoc => "Multi-document QA",
            QaType::Conditional => "Conditional QA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: String,
    #[serde(default)]
    pub reference_answer: String,
    pub reference_statements: Vec<String>,
    #[serde(default)]
    pub gold_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_doc_ids: Vec<String>,
    pub qa_type: QaType,
}

impl EvalItem {
    pub fn has_gold(&self) -> bool {
        !self.gold_chunk_ids.is_empty() || !self.gold_doc_ids.is_empty()
    }

    pub fn is_hit(&self, chunk_id: &str, doc_id: &str) -> bool {
        self.gold_chunk_ids.iter().any(|g| g == chunk_id) || self.gold_doc_ids.iter().any(|g| g == doc_id)
    }
}

pub fn read_eval_set(reader: impl BufRead) -> Result<Vec<EvalItem>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line).map_err(|e| EvalError::Record {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if item.reference_statements.is_empty() {
            return Err(EvalError::Record {
                line: i + 1,
                reason: "no reference statements".into(),
            });
        }
        out.push(item);
    }
    Ok(out)
}

/// A ranked result as seen by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRef {
    pub chunk_id: String,
    pub doc_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub k: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub points: Vec<RecallPoint>,
    pub evaluated: usize,
    pub excluded_empty_gold: usize,
}

/// Fraction of items whose top-k results contain a gold hit, per k. Items
/// without gold are excluded and counted.
pub fn recall_at_k(items: &[EvalItem], ranked: &[Vec<RankedRef>], ks: &[usize]) -> Result<RecallResult, EvalError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::BadKs);
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut first_hit: Vec<Option<usize>> = Vec::new();
    let mut excluded = 0;
    for (item, results) in items.iter().zip(ranked) {
        if !item.has_gold() {
            excluded += 1;
            continue;
        }
        first_hit.push(results.iter().position(|r| item.is_hit(&r.chunk_id, &r.doc_id)));
    }
    let n = first_hit.len();
    let points = ks
        .iter()
        .map(|&k| RecallPoint {
            k,
            rate: if n == 0 {
                0.0
            } else {
                first_hit.iter().filter(|p| p.is_some_and(|r| r < k)).count() as f64 / n as f64
            },
        })
        .collect();
    Ok(RecallResult {
        points,
        evaluated: n,
        excluded_empty_gold: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub label: String,
    pub answered: usize,
    pub total: usize,
    pub ratio: f64,
    /// Mean over answered items of their best passing similarity.
    pub mean_score: Option<f64>,
}

/// Per-type count of items with at least one result at or above
/// `threshold`, followed by a Total row.
pub fn coverage(items: &[EvalItem], similarities: &[Vec<f64>], threshold: f64) -> Vec<CoverageRow> {
    let mut acc: BTreeMap<QaType, (usize, usize, f64)> = QaType::ALL.iter().map(|&t| (t, (0, 0, 0.0))).collect();
    for (item, sims) in items.iter().zip(similarities) {
        let e = acc.get_mut(&item.qa_type).expect("all types present");
        e.1 += 1;
        if let Some(best) = sims.iter().copied().filter(|s| *s >= threshold).reduce(f64::max) {
            e.0 += 1;
            e.2 += best;
        }
    }
    let row = |label: &str, (answered, total, sum): (usize, usize, f64)| CoverageRow {
        label: label.to_string(),
        answered,
        total,
        ratio: if total == 0 { 0.0 } else { answered as f64 / total as f64 },
        mean_score: (answered > 0).then(|| sum / answered as f64),
    };
    let mut rows: Vec<CoverageRow> = acc.iter().map(|(t, v)| row(t.label(), *v)).collect();
    let total = acc
        .values()
        .fold((0, 0, 0.0), |(a, t, s), (a2, t2, s2)| (a + a2, t + t2, s + s2));
    rows.push(row("Total", total));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecall {
    pub value: f64,
    pub present: usize,
    pub total: usize,
    /// Statements whose judge call failed; counted absent.
    pub flagged: Vec<String>,
}

/// Share of distinct reference statements the judge finds in `answer`.
pub fn answer_recall(answer: &str, statements: &[String], judge: &dyn ModelClient) -> AnswerRecall {
    let mut seen = HashSet::new();
    let unique: Vec<&String> = statements
        .iter()
        .filter(|s| seen.insert(normalize_for_match(s)))
        .collect();
    let mut present = 0;
    let mut flagged = Vec::new();
    for s in &unique {
        match judge.judge(JudgeKind::StatementPresence, &[(*s).clone(), answer.to_string()]) {
            Ok(v) if v >= 0.5 => present += 1,
            Ok(_) => {}
            Err(e) => flagged.push(format!("{s}: {e}")),
        }
    }
    AnswerRecall {
        value: if unique.is_empty() { 0.0 } else { present as f64 / unique.len() as f64 },
        present,
        total: unique.len(),
        flagged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCoverage {
    pub label: String,
    pub answered: usize,
    pub total: usize,
    pub avg_text_score: f64,
}

/// Published full-system results, reported for comparison only. They were
/// obtained with fine-tuned large models and a production library and are
/// not reproducible with the stub clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLines {
    pub tag: String,
    pub operating_point: String,
    pub coverage: Vec<ReferenceCoverage>,
    pub recall: Vec<RecallPoint>,
    pub answer_recall_with_retrieval: f64,
    pub answer_recall_without_retrieval: f64,
}

impl Default for ReferenceLines {
    fn default() -> Self {
        let cov = |label: &str, answered, total, avg_text_score| ReferenceCoverage {
            label: label.to_string(),
            answered,
            total,
            avg_text_score,
        };
        Self {
            tag: "published reference (not reproduced)".to_string(),
            operating_point: "top_k=8, score_threshold=0.35".to_string(),
            coverage: vec![
                cov(QaType::SingleSimple.label(), 246, 250, 0.873),
                cov(QaType::SingleInference.label(), 246, 250, 0.805),
                cov(QaType::MultiDoc.label(), 188, 188, 0.874),
                cov(QaType::Conditional.label(), 247, 250, 0.820),
                cov("Total", 927, 938, 0.842),
            ],
            recall: [(1, 0.908), (3, 0.945), (5, 0.95), (8, 0.959), (32, 0.966), (64, 0.969)]
                .into_iter()
                .map(|(k, rate)| RecallPoint { k, rate })
                .collect(),
            answer_recall_with_retrieval: 0.666,
            answer_recall_without_retrieval: 0.529,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub items: usize,
    pub recall: RecallResult,
    pub coverage: Vec<CoverageRow>,
    pub answer_recall: f64,
    pub answer_recall_flagged: usize,
    pub reference: ReferenceLines,
}

impl EvalReport {
    pub fn check(&self) -> Result<(), EvalError> {
        for w in self.recall.points.windows(2) {
            if w[1].rate < w[0].rate {
                return Err(EvalError::Invariant(format!(
                    "recall@{} = {} < recall@{} = {}",
                    w[1].k, w[1].rate, w[0].k, w[0].rate
                )));
            }
        }
        let rates = self
            .recall
            .points
            .iter()
            .map(|p| p.rate)
            .chain(self.coverage.iter().map(|c| c.ratio))
            .chain([self.answer_recall]);
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(EvalError::Invariant(format!("rate {r} outside [0, 1]")));
            }
        }
        if let Some((total, per_type)) = self.coverage.split_last() {
            let (a, t) = per_type.iter().fold((0, 0), |(a, t), r| (a + r.answered, t + r.total));
            if (a, t) != (total.answered, total.total) {
                return Err(EvalError::Invariant("coverage Total differs from the sum of types".into()));
            }
        }
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        s.push_str("# Evaluation report\n\n");
        s.push_str(&format!(
            "{} items; {} evaluated for recall; {} excluded for empty gold.\n\n",
            self.items, self.recall.evaluated, self.recall.excluded_empty_gold
        ));

        s.push_str("## Retrieval coverage\n\n| QA type | Retrieved / all | Mean score |\n|---|---|---|\n");
        for r in &self.coverage {
            s.push_str(&format!(
                "| {} | {}/{} ({:.3}) | {} |\n",
                r.label, r.answered, r.total, r.ratio, opt(r.mean_score)
            ));
        }
        s.push_str(&format!(
            "\n{} at {}:\n\n| QA type | Retrieved / all | Avg. text score |\n|---|---|---|\n",
            self.reference.tag, self.reference.operating_point
        ));
        for r in &self.reference.coverage {
            s.push_str(&format!(
                "| {} | {}/{} ({:.3}) | {:.3} |\n",
                r.label,
                r.answered,
                r.total,
                r.answered as f64 / r.total as f64,
                r.avg_text_score
            ));
        }

        s.push_str("\n## Top-k recall\n\n| System |");
        for p in &self.recall.points {
            s.push_str(&format!(" Top {} |", p.k));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.recall.points.len()));
        s.push_str("\n| this run |");
        for p in &self.recall.points {
            s.push_str(&format!(" {:.3} |", p.rate));
        }
        s.push_str(&format!("\n| {} |", self.reference.tag));
        for p in &self.recall.points {
            let r = self.reference.recall.iter().find(|r| r.k == p.k);
            s.push_str(&format!(" {} |", opt(r.map(|r| r.rate))));
        }

        s.push_str("\n\n## Answer recall\n\n| System | Answer recall |\n|---|---|\n");
        s.push_str(&format!("| this run | {:.3} |\n", self.answer_recall));
        s.push_str(&format!(
            "| {}, with retrieval | {:.3} |\n| {}, without retrieval | {:.3} |\n",
            self.reference.tag,
            self.reference.answer_recall_with_retrieval,
            self.reference.tag,
            self.reference.answer_recall_without_retrieval
        ));
        if self.answer_recall_flagged > 0 {
            s.push_str(&format!(
                "\n{} statement judgements failed and were counted absent.\n",
                self.answer_recall_flagged
            ));
        }
        s
    }
}

/// Writes `report.json` and `report.md` into `dir` after checking the
/// report invariants.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    report.check()?;
    fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)? + "\n")?;
    let md = dir.join("report.md");
    fs::write(&md, report.to_markdown())?;
    Ok(vec![json, md])
}

/// Runs every item through ranking and the full pipeline.
pub fn evaluate(
    items: &[EvalItem],
    store: &Collection,
    client: &dyn ModelClient,
    config: &PipelineConfig,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    let max_k = ks.iter().copied().max().ok_or(EvalError::BadKs)?;
    let rank_config = PipelineConfig {
        retrieve_n: max_k.max(config.top_k),
        score_threshold: -1.0,
        threshold_post_rerank: false,
        ..config.clone()
    };
    struct Run {
        ranked: Vec<RankedRef>,
        sims: Vec<f64>,
        recall: AnswerRecall,
    }
    let runs: Vec<Run> = items
        .par_iter()
        .map(|item| {
            let ranked = rank(&item.question, &rank_config, store, client)?
                .into_iter()
                .map(|r| RankedRef {
                    chunk_id: r.chunk_id,
                    doc_id: r.payload.doc_id,
                    similarity: r.similarity,
                })
                .collect();
            let (answer, _) = answer_query(&item.question, config, store, client)?;
            let sims = answer.retrieved.iter().map(|r| r.similarity).collect();
            let recall = answer_recall(&answer.text, &item.reference_statements, client);
            Ok(Run { ranked, sims, recall })
        })
        .collect::<Result<_, EvalError>>()?;

    let ranked: Vec<Vec<RankedRef>> = runs.iter().map(|r| r.ranked.clone()).collect();
    let sims: Vec<Vec<f64>> = runs.iter().map(|r| r.sims.clone()).collect();
    let recall = recall_at_k(items, &ranked, ks)?;
    let threshold = if config.threshold_post_rerank { -1.0 } else { config.score_threshold };
    let cov = coverage(items, &sims, threshold);
    let answer_recall = if runs.is_empty() {
        0.0
    } else {
        runs.iter().map(|r| r.recall.value).sum::<f64>() / runs.len() as f64
    };
    Ok(EvalReport {
        config: serde_json::to_value(config)?,
        items: items.len(),
        recall,
        coverage: cov,
        answer_recall,
        answer_recall_flagged: runs.iter().map(|r| r.recall.flagged.len()).sum(),
        reference: ReferenceLines::default(),
    })
}
