//! Corpus loading and text cleaning.
//!
//! The ingestion format is UTF-8 JSON Lines, one document per line:
//!
//! ```json
//! {"doc_id":"p1","title":"Basalt","body":"...","metadata":{"source":"arxiv"},"user_id":"u7"}
//! ```
//!
//! `title`, `metadata` and `user_id` are optional. A record with a `user_id`
//! belongs to that user's library; otherwise the library tag given to
//! [`load_corpus`] applies.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::{Tokenizer, WordPunctTokenizer};

/// Documents with fewer tokens than this after cleaning are discarded.
pub const NEAR_EMPTY_TOKENS: usize = 20;

/// Header/footer heuristic: a trimmed line this short...
pub const REPEATED_LINE_MAX_CHARS: usize = 80;
/// ...occurring at least this many times is treated as page furniture.
pub const REPEATED_LINE_MIN_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Library {
    Public,
    User(String),
}

impl Library {
    /// Partition key value used by the vector store.
    pub fn partition_value(&self) -> &str {
        match self {
            Library::Public => crate::vectorstore::PUBLIC_PARTITION,
            Library::User(id) => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub title: Option<String>,
    pub body: String,
    pub metadata: BTreeMap<String, String>,
    pub library: Library,
}

/// On-disk record shape. Field order here is the serialization order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    body: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_id: Option<String>,
}

impl Document {
    /// Serialize as one canonical corpus line (no trailing newline).
    pub fn to_record_line(&self) -> String {
        let record = DocumentRecord {
            doc_id: self.doc_id.clone(),
            title: self.title.clone(),
            body: self.body.clone(),
            metadata: self.metadata.clone(),
            user_id: match &self.library {
                Library::Public => None,
                Library::User(id) => Some(id.clone()),
            },
        };
        serde_json::to_string(&record).expect("document record serializes")
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Unreadable { path: String, source: io::Error },
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
}

/// Outcome of cleaning one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub doc_id: String,
    pub removed_segments: usize,
    pub empty_after_cleaning: bool,
}

/// Streams documents from a JSON Lines corpus file.
///
/// Opening the file is the only fatal failure; every malformed record is
/// yielded as a [`CorpusError::Record`] carrying its 1-based line number.
pub fn load_corpus(
    path: impl AsRef<Path>,
    library: Library,
) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    Ok(CorpusReader::new(BufReader::new(file), library))
}

pub struct CorpusReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    library: Library,
    seen: HashSet<String>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, library: Library) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            library,
            seen: HashSet::new(),
        }
    }

    fn parse(&mut self, line: &str) -> Result<Document, String> {
        let record: DocumentRecord =
            serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
        if record.doc_id.trim().is_empty() {
            return Err("empty doc_id".into());
        }
        if record.body.trim().is_empty() {
            return Err(format!("document {} has an empty body", record.doc_id));
        }
        let library = match record.user_id {
            Some(id) if id.trim().is_empty() => {
                return Err(format!("document {} has an empty user_id", record.doc_id))
            }
            Some(id) => Library::User(id),
            None => self.library.clone(),
        };
        if !self.seen.insert(record.doc_id.clone()) {
            return Err(format!("duplicate doc_id {}", record.doc_id));
        }
        Ok(Document {
            doc_id: record.doc_id,
            title: record.title,
            body: record.body,
            metadata: record.metadata,
            library,
        })
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line_no = self.line_no;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(CorpusError::Record {
                        line: line_no,
                        reason: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line).map_err(|reason| CorpusError::Record {
                line: line_no,
                reason,
            }));
        }
    }
}

/// Removes page furniture and normalizes whitespace.
///
/// Steps, in order: control characters other than line breaks and tabs are
/// dropped; every trimmed line of at most [`REPEATED_LINE_MAX_CHARS`] chars
/// that occurs [`REPEATED_LINE_MIN_COUNT`] or more times is removed (each
/// removed occurrence counts as one removed segment); all whitespace runs
/// collapse to one space and the result is trimmed.
pub fn clean_text(raw: &str) -> (String, CleaningReport) {
    let stripped: String = raw
        .chars()
        .filter(|c| !c.is_control() || matches!(c, '\n' | '\t' | '\r'))
        .collect();

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in stripped.lines().map(str::trim) {
        if !line.is_empty() && line.chars().count() <= REPEATED_LINE_MAX_CHARS {
            *counts.entry(line).or_default() += 1;
        }
    }

    let mut removed = 0;
    let mut kept = Vec::new();
    for line in stripped.lines() {
        let t = line.trim();
        if counts.get(t).is_some_and(|&n| n >= REPEATED_LINE_MIN_COUNT) {
            removed += 1;
        } else {
            kept.push(t);
        }
    }

    let cleaned = kept
        .iter()
        .flat_map(|l| l.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ");
    let report = CleaningReport {
        doc_id: String::new(),
        removed_segments: removed,
        empty_after_cleaning: cleaned.is_empty(),
    };
    (cleaned, report)
}

/// Cleans a document body. Returns `None` for the document when fewer than
/// `min_tokens` tokens survive; the report then has `empty_after_cleaning`.
pub fn clean_document(
    doc: &Document,
    tokenizer: &dyn Tokenizer,
    min_tokens: usize,
) -> (Option<Document>, CleaningReport) {
    let (body, mut report) = clean_text(&doc.body);
    report.doc_id = doc.doc_id.clone();
    if tokenizer.count(&body) < min_tokens {
        report.empty_after_cleaning = true;
        return (None, report);
    }
    let cleaned = Document {
        body,
        title: doc.title.as_ref().map(|t| clean_text(t).0),
        ..doc.clone()
    };
    (Some(cleaned), report)
}

/// Cleans every document, keeping input order and dropping near-empty ones.
pub fn clean_corpus(docs: &[Document]) -> (Vec<Document>, Vec<CleaningReport>) {
    use rayon::prelude::*;
    let tokenizer = WordPunctTokenizer;
    let results: Vec<_> = docs
        .par_iter()
        .map(|d| clean_document(d, &tokenizer, NEAR_EMPTY_TOKENS))
        .collect();
    let mut kept = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for (doc, report) in results {
        kept.extend(doc);
        reports.push(report);
    }
    (kept, reports)
}
