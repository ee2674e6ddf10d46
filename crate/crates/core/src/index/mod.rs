//! The searchable store: document catalog, metadata filtering, timeline
//! histograms, and the lexical and vector indexes.

pub mod lexical;
pub mod vector;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Datelike, Duration, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, Filter, Topic};

pub use lexical::{Field, LexicalIndex, SearchHit};
pub use vector::{EntryKey, VectorHit, VectorIndex};

/// Set of catalog ordinals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocMask {
    bits: Vec<bool>,
}

impl DocMask {
    pub fn all(n: usize) -> Self {
        DocMask { bits: vec![true; n] }
    }

    pub fn none(n: usize) -> Self {
        DocMask { bits: vec![false; n] }
    }

    pub fn from_ordinals(n: usize, ords: impl IntoIterator<Item = u32>) -> Self {
        let mut m = Self::none(n);
        for o in ords {
            m.bits[o as usize] = true;
        }
        m
    }

    pub fn contains(&self, ord: u32) -> bool {
        self.bits.get(ord as usize).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn intersect(&mut self, other: &DocMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= *b;
        }
    }

    pub fn ordinals(&self) -> impl Iterator<Item = u32> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i as u32)
    }
}

/// Document metadata plus each document's leaf topic, with the topic
/// ancestry needed to expand a selected parent topic to its leaves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    docs: Vec<Document>,
    ordinals: HashMap<String, u32>,
    doc_topics: Vec<Option<String>>,
    /// topic id -> itself followed by its ancestors
    lineage: HashMap<String, Vec<String>>,
}

impl Catalog {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut ordinals = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.doc_id.is_empty() {
                return Err(Error::invalid("empty doc_id"));
            }
            if ordinals.insert(d.doc_id.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate doc_id {}", d.doc_id)));
            }
        }
        let n = docs.len();
        Ok(Catalog { docs, ordinals, doc_topics: vec![None; n], lineage: HashMap::new() })
    }

    /// Attaches leaf assignments and the topic forest.
    pub fn set_topics(&mut self, assignments: &BTreeMap<String, String>, topics: &[Topic]) -> Result<()> {
        let parents: HashMap<&str, Option<&str>> =
            topics.iter().map(|t| (t.topic_id.as_str(), t.parent_id.as_deref())).collect();
        let mut lineage = HashMap::new();
        for t in topics {
            let mut chain = vec![t.topic_id.clone()];
            let mut cur = t.parent_id.as_deref();
            while let Some(p) = cur {
                if chain.len() > topics.len() {
                    return Err(Error::invalid("topic parent links contain a cycle"));
                }
                chain.push(p.to_string());
                cur = parents.get(p).copied().flatten();
            }
            lineage.insert(t.topic_id.clone(), chain);
        }
        let mut doc_topics = vec![None; self.docs.len()];
        for (doc_id, topic_id) in assignments {
            let ord = self.ordinal(doc_id).ok_or_else(|| Error::invalid(format!("unknown doc {doc_id}")))?;
            if !lineage.contains_key(topic_id) {
                return Err(Error::invalid(format!("unknown topic {topic_id}")));
            }
            doc_topics[ord as usize] = Some(topic_id.clone());
        }
        self.doc_topics = doc_topics;
        self.lineage = lineage;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, ord: u32) -> &Document {
        &self.docs[ord as usize]
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.ordinals.get(doc_id).copied()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.ordinal(doc_id).map(|o| self.doc(o))
    }

    pub fn topic_of(&self, ord: u32) -> Option<&str> {
        self.doc_topics[ord as usize].as_deref()
    }

    fn in_topics(&self, ord: u32, selected: &BTreeSet<String>) -> bool {
        let Some(leaf) = self.topic_of(ord) else { return false };
        match self.lineage.get(leaf) {
            Some(chain) => chain.iter().any(|t| selected.contains(t)),
            None => selected.contains(leaf),
        }
    }

    /// Metadata predicates of `filter`: date range, topic selection, title
    /// keyword and explicit doc ids. The text query is resolved by the engine.
    pub fn metadata_mask(&self, filter: &Filter) -> DocMask {
        let keyword = filter.title_keyword.as_ref().map(|k| k.to_lowercase());
        let bits = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                filter.date_from.is_none_or(|f| d.pub_date >= f)
                    && filter.date_to.is_none_or(|t| d.pub_date <= t)
                    && filter.topic_ids.as_ref().is_none_or(|s| self.in_topics(i as u32, s))
                    && keyword.as_ref().is_none_or(|k| d.title.to_lowercase().contains(k.as_str()))
                    && filter.doc_ids.as_ref().is_none_or(|s| s.contains(&d.doc_id))
            })
            .collect();
        DocMask { bits }
    }

    pub fn ids(&self, mask: &DocMask) -> BTreeSet<String> {
        mask.ordinals().map(|o| self.doc(o).doc_id.clone()).collect()
    }
}

/// Ids of documents passing the metadata predicates of `filter`.
pub fn apply_filter(catalog: &Catalog, filter: &Filter) -> BTreeSet<String> {
    catalog.ids(&catalog.metadata_mask(filter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Day,
    Week,
    Month,
}

impl std::str::FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Bucket::Day),
            "week" => Ok(Bucket::Week),
            "month" => Ok(Bucket::Month),
            other => Err(Error::invalid(format!("unknown bucket '{other}' (day|week|month)"))),
        }
    }
}

impl Bucket {
    /// Start of the bucket containing `date`. Weeks start on Monday.
    pub fn start_of(self, date: NaiveDate) -> NaiveDate {
        match self {
            Bucket::Day => date,
            Bucket::Week => date - Duration::days(date.weekday().num_days_from_monday() as i64),
            Bucket::Month => date.with_day(1).expect("day 1 exists"),
        }
    }

    pub fn next(self, start: NaiveDate) -> NaiveDate {
        match self {
            Bucket::Day => start + Duration::days(1),
            Bucket::Week => start + Duration::days(7),
            Bucket::Month => start + Months::new(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bucket_start: NaiveDate,
    pub count: usize,
}

/// Counts per bucket over the span of the masked documents, empty buckets included.
pub fn timeline_histogram(catalog: &Catalog, mask: &DocMask, bucket: Bucket) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for ord in mask.ordinals() {
        *counts.entry(bucket.start_of(catalog.doc(ord).pub_date)).or_default() += 1;
    }
    let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut cur = first;
    while cur <= last {
        out.push(HistogramBin { bucket_start: cur, count: counts.get(&cur).copied().unwrap_or(0) });
        cur = bucket.next(cur);
    }
    out
}
