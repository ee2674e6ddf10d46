//! Shared domain types, vector math and the engine configuration record.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved topic id for documents the density clustering leaves unassigned.
pub const OUTLIER_TOPIC_ID: &str = "outlier";

/// Dot product divided by the product of L2 norms.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Rounds every component to the nearest `f32`. Stored vectors go through
/// this so that the on-disk 32-bit encoding reproduces them exactly.
pub fn quantize_f32(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = *x as f32 as f64;
    }
}

/// Normalized, size-weighted mean of the given vectors.
pub(crate) fn normalized_mean<'a, I>(vectors: I, dim: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; dim];
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    normalize(&sum)
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One corpus item. Embeddings, topic assignments and coordinates live in
/// the index and atlas structures keyed by `doc_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub pub_date: NaiveDate,
    pub journal: String,
    pub authors: Vec<String>,
}

impl Document {
    /// Text fed to the document embedder.
    pub fn embedding_text(&self) -> String {
        format!("{} {}", self.title, self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceChunk {
    pub doc_id: String,
    pub seq: u32,
    pub text: String,
}

/// Half-open date range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TimeInterval {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("empty interval {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn with_days(start: NaiveDate, days: u32) -> Result<Self> {
        Self::new(start, start + Duration::days(days as i64))
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date < self.end
    }

    pub fn id(&self) -> String {
        format!("{}/{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub centroid: Vec<f64>,
    pub keywords: Vec<Keyword>,
    pub label: String,
    pub description: String,
    pub size: usize,
    pub parent_id: Option<String>,
    pub level: u32,
    pub coords: [f64; 2],
    pub source_intervals: BTreeSet<String>,
    /// Direct children one level down; empty for leaves.
    #[serde(default)]
    pub children: Vec<String>,
    /// Set when the label came from the fallback generator after a remote failure.
    #[serde(default)]
    pub degraded_label: bool,
}

impl Topic {
    pub fn is_outlier(&self) -> bool {
        self.topic_id == OUTLIER_TOPIC_ID
    }

    pub fn top_terms(&self, n: usize) -> Vec<&str> {
        self.keywords.iter().take(n).map(|k| k.term.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Lexical,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterQuery {
    pub text: String,
    pub mode: QueryMode,
}

/// Conjunctive document filter. The empty filter matches every document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_from: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_to: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_ids: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title_keyword: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<FilterQuery>,
    /// Explicit document set, e.g. a search hit list applied as a filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_ids: Option<BTreeSet<String>>,
}

impl Filter {
    pub fn validate(&self) -> Result<()> {
        if let (Some(from), Some(to)) = (self.date_from, self.date_to) {
            if from > to {
                return Err(Error::invalid(format!("date_from {from} after date_to {to}")));
            }
        }
        if let Some(q) = &self.query {
            if q.text.trim().is_empty() {
                return Err(Error::invalid("filter query text is empty"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        *self == Filter::default()
    }

    /// Field-wise conjunction of two filters. Topic id sets intersect by id,
    /// so a parent in one and its leaf in the other yields nothing.
    pub fn and(&self, other: &Filter) -> Result<Filter> {
        fn intersect(
            a: &Option<BTreeSet<String>>,
            b: &Option<BTreeSet<String>>,
        ) -> Option<BTreeSet<String>> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.intersection(b).cloned().collect()),
                (Some(x), None) | (None, Some(x)) => Some(x.clone()),
                (None, None) => None,
            }
        }
        if self.title_keyword.is_some() && other.title_keyword.is_some() {
            return Err(Error::invalid("cannot combine two title keywords"));
        }
        if self.query.is_some() && other.query.is_some() {
            return Err(Error::invalid("cannot combine two filter queries"));
        }
        Ok(Filter {
            date_from: self.date_from.max(other.date_from),
            date_to: match (self.date_to, other.date_to) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
            topic_ids: intersect(&self.topic_ids, &other.topic_ids),
            title_keyword: self.title_keyword.clone().or(other.title_keyword.clone()),
            query: self.query.clone().or(other.query.clone()),
            doc_ids: intersect(&self.doc_ids, &other.doc_ids),
        })
    }
}

/// Connection settings for an HTTP model service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_tokens: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            timeout_secs: 30,
            batch_size: 64,
            max_in_flight: 4,
            max_tokens: 512,
        }
    }
}

/// Every tunable constant of the pipeline. All fields are optional in the
/// config file and fall back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub embedding_dim: usize,
    pub interval_days: u32,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub reduce_dim: usize,
    pub merge_threshold: f64,
    pub hierarchy_thresholds: Vec<f64>,
    pub top_n_keywords: usize,
    pub top_k_sentences: usize,
    pub rng_seed: u64,
    /// Reassign density outliers to the nearest topic centroid of their interval.
    pub reassign_outliers: bool,
    /// Run the seeded neighbor-refinement stage after the linear map projection.
    pub refine_layout: bool,
    pub refine_iterations: usize,
    pub refine_neighbors: usize,
    /// Number of semantic hits a `semantic` filter query keeps.
    pub semantic_filter_k: usize,
    /// Maximum number of points returned by one map request.
    pub map_point_cap: usize,
    pub embedder: Option<RemoteConfig>,
    pub llm: Option<RemoteConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 768,
            interval_days: 15,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            min_cluster_size: 10,
            min_samples: 5,
            reduce_dim: 5,
            merge_threshold: 0.80,
            hierarchy_thresholds: vec![0.80, 0.60],
            top_n_keywords: 10,
            top_k_sentences: 10,
            rng_seed: 42,
            reassign_outliers: false,
            refine_layout: false,
            refine_iterations: 200,
            refine_neighbors: 15,
            semantic_filter_k: 100,
            map_point_cap: 50_000,
            embedder: None,
            llm: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (-1.0..=1.0).contains(&x);
        if self.embedding_dim < self.reduce_dim || self.reduce_dim < 2 {
            return Err(Error::invalid("require embedding_dim >= reduce_dim >= 2"));
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold <= 1.0) {
            return Err(Error::invalid("merge_threshold must lie in (0, 1]"));
        }
        if !self.hierarchy_thresholds.iter().all(|&t| in_unit(t)) {
            return Err(Error::invalid("hierarchy thresholds must lie in [-1, 1]"));
        }
        if self.top_k_sentences == 0 {
            return Err(Error::invalid("top_k_sentences must be at least 1"));
        }
        if self.interval_days == 0 {
            return Err(Error::invalid("interval_days must be positive"));
        }
        if self.min_cluster_size < 2 || self.min_samples == 0 {
            return Err(Error::invalid("min_cluster_size >= 2 and min_samples >= 1 required"));
        }
        if self.bm25_k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25_b) {
            return Err(Error::invalid("bm25_k1 >= 0 and bm25_b in [0, 1] required"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
