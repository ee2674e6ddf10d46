//! Inverted index with BM25 scoring over the title and body fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DocMask;
use crate::error::{Error, Result};
use crate::model::Document;
use crate::text::analyze;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Body,
    Title,
}

/// A term's occurrences in one document: (document ordinal, term frequency).
pub type Posting = (u32, u32);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldIndex {
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
}

impl FieldIndex {
    fn build<'a>(texts: impl Iterator<Item = &'a str>) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::new();
        for (ord, text) in texts.enumerate() {
            let tokens = analyze(text);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push((ord as u32, tf));
            }
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        FieldIndex { postings, doc_lengths, avg_doc_length }
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndex {
    pub doc_ids: Vec<String>,
    pub body: FieldIndex,
    pub title: FieldIndex,
    pub k1: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    pub matched_field: Field,
}

/// Smoothed idf, never negative.
pub fn bm25_idf(n: usize, df: usize) -> f64 {
    (1.0 + (n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// Saturated, length-normalized term frequency component.
pub fn bm25_tf(tf: f64, doc_len: f64, avg_len: f64, k1: f64, b: f64) -> f64 {
    let norm = if avg_len > 0.0 { doc_len / avg_len } else { 0.0 };
    tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
}

/// Distinct query terms in first-occurrence order.
pub fn query_terms(query: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    analyze(query).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

impl LexicalIndex {
    pub fn build(docs: &[Document], k1: f64, b: f64) -> Self {
        LexicalIndex {
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            body: FieldIndex::build(docs.iter().map(|d| d.body.as_str())),
            title: FieldIndex::build(docs.iter().map(|d| d.title.as_str())),
            k1,
            b,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn field(&self, field: Field) -> &FieldIndex {
        match field {
            Field::Body => &self.body,
            Field::Title => &self.title,
        }
    }

    /// BM25 scores for every document with a positive score that passes `allowed`.
    pub fn score_all(&self, query: &str, field: Field, allowed: Option<&DocMask>) -> Result<Vec<(u32, f64)>> {
        let terms = query_terms(query);
        if terms.is_empty() {
            return Err(Error::invalid("query has no searchable terms"));
        }
        let fx = self.field(field);
        let n = self.len();
        let mut scores = vec![0.0f64; n];
        let mut touched = Vec::new();
        for term in &terms {
            let Some(list) = fx.postings.get(term) else { continue };
            let idf = bm25_idf(n, list.len());
            for &(ord, tf) in list {
                if allowed.is_some_and(|m| !m.contains(ord)) {
                    continue;
                }
                let len = fx.doc_lengths[ord as usize] as f64;
                if scores[ord as usize] == 0.0 {
                    touched.push(ord);
                }
                scores[ord as usize] += idf * bm25_tf(tf as f64, len, fx.avg_doc_length, self.k1, self.b);
            }
        }
        Ok(touched
            .into_iter()
            .map(|o| (o, scores[o as usize]))
            .filter(|&(_, s)| s > 0.0)
            .collect())
    }

    /// Top `k` documents after skipping `offset`, ordered by (score desc, doc_id asc).
    pub fn search(
        &self,
        query: &str,
        field: Field,
        allowed: Option<&DocMask>,
        k: usize,
        offset: usize,
    ) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut scored = self.score_all(query, field, allowed)?;
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });
        Ok(scored
            .into_iter()
            .enumerate()
            .skip(offset)
            .take(k)
            .map(|(i, (ord, score))| SearchHit {
                doc_id: self.doc_ids[ord as usize].clone(),
                score,
                rank: i + 1,
                matched_field: field,
            })
            .collect())
    }
}
