//! Corpus parsing, sentence segmentation and interval partitioning.

use std::io::BufRead;

use chrono::{Duration, NaiveDate};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, SentenceChunk, TimeInterval};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub sentence_count: usize,
    pub min_date: NaiveDate,
    pub max_date: NaiveDate,
    pub interval_count: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

/// One line of the corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub body: String,
    pub pub_date: String,
    pub journal: String,
    pub authors: Vec<String>,
}

impl From<&Document> for CorpusRecord {
    fn from(d: &Document) -> Self {
        CorpusRecord {
            doc_id: d.doc_id.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
            pub_date: d.pub_date.to_string(),
            journal: d.journal.clone(),
            authors: d.authors.clone(),
        }
    }
}

impl CorpusRecord {
    fn into_document(self) -> Option<Document> {
        if self.doc_id.trim().is_empty() {
            return None;
        }
        let pub_date = NaiveDate::parse_from_str(self.pub_date.trim(), "%Y-%m-%d").ok()?;
        Some(Document {
            doc_id: self.doc_id,
            title: self.title,
            body: self.body,
            pub_date,
            journal: self.journal,
            authors: self.authors,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub documents: Vec<Document>,
    pub stats: CorpusStats,
}

/// Reads line-delimited JSON records. Malformed lines are skipped, and a
/// repeated `doc_id` replaces the earlier record (at the later position).
pub fn parse_corpus<R: BufRead>(source: R, interval_days: u32) -> Result<ParsedCorpus> {
    let mut docs: IndexMap<String, Document> = IndexMap::new();
    let mut skipped = 0;
    let mut duplicates = 0;
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str::<CorpusRecord>(&line)
            .ok()
            .and_then(CorpusRecord::into_document);
        match doc {
            Some(doc) => {
                if docs.shift_remove(&doc.doc_id).is_some() {
                    duplicates += 1;
                    tracing::warn!(line = lineno + 1, doc_id = %doc.doc_id, "duplicate doc_id, keeping later record");
                }
                docs.insert(doc.doc_id.clone(), doc);
            }
            None => {
                skipped += 1;
                tracing::warn!(line = lineno + 1, "skipping malformed record");
            }
        }
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus { skipped });
    }
    let documents: Vec<Document> = docs.into_values().collect();
    let stats = corpus_stats(&documents, interval_days, skipped, duplicates)?;
    Ok(ParsedCorpus { documents, stats })
}

pub fn corpus_stats(
    docs: &[Document],
    interval_days: u32,
    skipped: usize,
    duplicates: usize,
) -> Result<CorpusStats> {
    let min_date = docs.iter().map(|d| d.pub_date).min().ok_or(Error::EmptyCorpus { skipped })?;
    let max_date = docs.iter().map(|d| d.pub_date).max().unwrap_or(min_date);
    let span = (max_date - min_date).num_days() as usize + 1;
    let sentence_count = docs.iter().map(|d| segment_sentences(&d.body).len()).sum();
    Ok(CorpusStats {
        doc_count: docs.len(),
        sentence_count,
        min_date,
        max_date,
        interval_count: span.div_ceil(interval_days as usize),
        skipped,
        duplicates,
    })
}

const ABBREVIATIONS: &[&str] = &[
    "Dr", "Mr", "Mrs", "Ms", "Prof", "Fig", "al", "e.g", "i.e", "vs", "approx", "No",
];

fn is_abbreviation(token: &str, previous: Option<&str>) -> bool {
    let stem = token
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches('.');
    if stem == "al" {
        // only as part of "et al."
        return previous.is_some_and(|p| p.trim_start_matches(|c: char| !c.is_alphanumeric()) == "et");
    }
    if ABBREVIATIONS.contains(&stem) {
        return true;
    }
    let mut chars = stem.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

/// Rule-based sentence splitter. Splits after `.`, `!` or `?` when the next
/// token starts with an uppercase letter or digit, unless the period closes
/// a known abbreviation or a single-letter initial.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        let tok = tokens[i];
        let Some(next) = tokens.get(i + 1) else { break };
        let Some(last) = tok.chars().last() else { continue };
        if !matches!(last, '.' | '!' | '?') {
            continue;
        }
        if !next.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit()) {
            continue;
        }
        let previous = if i > 0 { Some(tokens[i - 1]) } else { None };
        if last == '.' && is_abbreviation(tok, previous) {
            continue;
        }
        out.push(tokens[start..=i].join(" "));
        start = i + 1;
    }
    if start < tokens.len() {
        out.push(tokens[start..].join(" "));
    }
    out
}

/// Splits every document body into numbered sentence chunks.
pub fn chunk_documents(docs: &[Document]) -> Vec<SentenceChunk> {
    docs.iter()
        .flat_map(|d| {
            segment_sentences(&d.body)
                .into_iter()
                .enumerate()
                .map(|(seq, text)| SentenceChunk {
                    doc_id: d.doc_id.clone(),
                    seq: seq as u32,
                    text,
                })
        })
        .collect()
}

/// Buckets documents into consecutive half-open windows of `interval_days`
/// anchored at the earliest publication date. Empty windows are omitted.
pub fn partition_intervals(
    docs: &[Document],
    interval_days: u32,
) -> Result<Vec<(TimeInterval, Vec<Document>)>> {
    if interval_days == 0 {
        return Err(Error::invalid("interval_days must be positive"));
    }
    let Some(anchor) = docs.iter().map(|d| d.pub_date).min() else {
        return Ok(Vec::new());
    };
    let mut buckets: std::collections::BTreeMap<i64, Vec<Document>> = Default::default();
    for d in docs {
        let idx = (d.pub_date - anchor).num_days() / interval_days as i64;
        buckets.entry(idx).or_default().push(d.clone());
    }
    buckets
        .into_iter()
        .map(|(idx, members)| {
            let start = anchor + Duration::days(idx * interval_days as i64);
            Ok((TimeInterval::with_days(start, interval_days)?, members))
        })
        .collect()
}
