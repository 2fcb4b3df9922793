use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Tokenizer;

/// Lowercased tokens that end with a period without ending the sentence.
const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "co", "corp", "dept", "dr", "e.g", "eq", "eqs", "est", "fig",
    "figs", "i.e", "inc", "jr", "ltd", "min", "mr", "mrs", "ms", "mt", "prof", "ref", "refs",
    "sec", "sr", "st", "vol", "vs", "wt",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '’', '”', '»'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// Byte range of `text` inside the input; the gaps between spans are whitespace.
    pub span: Range<usize>,
    pub token_count: usize,
}

fn is_abbreviation(before_period: &str) -> bool {
    let word_start = before_period
        .rfind(|c: char| !(c.is_alphanumeric() || c == '.'))
        .map_or(0, |i| i + before_period[i..].chars().next().map_or(1, char::len_utf8));
    let word = before_period[word_start..].to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Rule-based sentence splitter.
///
/// A sentence ends after a run of `.`, `!` or `?` (plus closing quotes or
/// brackets) that is followed by whitespace and then a character that is not
/// a lowercase letter, or by the end of the text. A single period after a
/// known abbreviation does not end a sentence.
pub fn split_sentences(text: &str, tokenizer: &dyn Tokenizer) -> Vec<Sentence> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();

    while let Some((i, c)) = chars.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut end = i + c.len_utf8();
        let mut only_period = c == '.';
        while let Some(&(j, n)) = chars.peek() {
            if matches!(n, '.' | '!' | '?') {
                only_period &= n == '.';
            } else if !CLOSERS.contains(&n) {
                break;
            }
            end = j + n.len_utf8();
            chars.next();
        }
        let rest = &text[end..];
        let next_visible = rest.trim_start().chars().next();
        let at_gap = rest.is_empty() || rest.starts_with(char::is_whitespace);
        if !at_gap {
            continue;
        }
        if next_visible.is_some_and(char::is_lowercase) {
            continue;
        }
        let s = start.unwrap_or(0);
        if only_period && end - i == 1 && is_abbreviation(&text[s..i]) && next_visible.is_some() {
            continue;
        }
        spans.push(s..end);
        start = None;
    }
    if let Some(s) = start {
        spans.push(s..text.trim_end().len().max(s));
    }

    spans
        .into_iter()
        .filter(|r| !r.is_empty())
        .enumerate()
        .map(|(index, span)| {
            let text = text[span.clone()].to_string();
            Sentence {
                index,
                token_count: tokenizer.count(&text),
                text,
                span,
            }
        })
        .collect()
}
