//! The built engine: every index, the atlas and the interval models, plus
//! the read-side operations the gateway serves.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::atlas::{build_hierarchy, layout_atlas, merge_models, DocLookup, MergedAtlas};
use crate::embed::{embed_documents, embed_sentences, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::index::{
    timeline_histogram, Bucket, Catalog, DocMask, EntryKey, Field, HistogramBin, LexicalIndex, SearchHit, VectorIndex,
};
use crate::ingest::{chunk_documents, partition_intervals, CorpusStats};
use crate::llm::LlmProvider;
use crate::model::{Document, EngineConfig, Filter, QueryMode, Topic};
use crate::qa::{answer_corpus, answer_document, retrieve_sentences, route_corpus_query, Answer, QaMode, QaRequest};
use crate::topics::{build_interval_model, IntervalModel};

/// Everything a snapshot holds.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub config: EngineConfig,
    pub stats: CorpusStats,
    pub catalog: Catalog,
    pub lexical: LexicalIndex,
    pub doc_index: VectorIndex,
    pub sentence_index: VectorIndex,
    /// Sentence texts aligned with `sentence_index` entries.
    pub sentence_texts: Vec<String>,
    pub atlas: MergedAtlas,
    pub interval_models: Vec<IntervalModel>,
}

/// Runs the full pipeline: embed, chunk, partition, cluster each interval,
/// merge, build the hierarchy and lay out the map.
pub fn build_state(
    docs: Vec<Document>,
    stats: CorpusStats,
    cfg: &EngineConfig,
    embedder: &EmbeddingProvider,
    llm: &LlmProvider,
) -> Result<EngineState> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus { skipped: stats.skipped });
    }
    if embedder.dimension() != cfg.embedding_dim {
        return Err(Error::invalid("embedder dimension differs from embedding_dim"));
    }
    tracing::info!(docs = docs.len(), "embedding documents");
    let doc_vectors = embed_documents(&docs, embedder)?;
    let chunks = chunk_documents(&docs);
    tracing::info!(sentences = chunks.len(), "embedding sentences");
    let sentence_vectors = embed_sentences(&chunks, embedder)?;

    let intervals = partition_intervals(&docs, cfg.interval_days)?;
    let by_id: std::collections::HashMap<&str, usize> =
        docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i)).collect();
    let mut models = Vec::with_capacity(intervals.len());
    for (interval, members) in &intervals {
        let refs: Vec<&Document> = members.iter().collect();
        let vecs: Vec<&[f64]> = members.iter().map(|d| doc_vectors[by_id[d.doc_id.as_str()]].as_slice()).collect();
        let model = build_interval_model(*interval, &refs, &vecs, cfg, llm)?;
        tracing::info!(interval = %interval.id(), docs = members.len(), topics = model.topics.len(), "clustered interval");
        models.push(model);
    }

    let lookup = DocLookup::new(&docs, &doc_vectors)?;
    let (mut atlas, leaf_counts) = merge_models(&models, &lookup, cfg.merge_threshold, cfg.top_n_keywords, llm)?;
    let n_leaves = leaf_counts.len();
    let parents = build_hierarchy(&mut atlas.topics[..n_leaves], &leaf_counts, &cfg.hierarchy_thresholds, cfg.top_n_keywords, llm)?;
    atlas.topics.extend(parents);
    let doc_ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    layout_atlas(&mut atlas, &doc_ids, &doc_vectors, cfg)?;
    tracing::info!(leaves = n_leaves, topics = atlas.topics.len(), "atlas built");

    let lexical = LexicalIndex::build(&docs, cfg.bm25_k1, cfg.bm25_b);
    let mut doc_index = VectorIndex::new(cfg.embedding_dim);
    for (i, (d, v)) in docs.iter().zip(&doc_vectors).enumerate() {
        doc_index.insert(EntryKey { doc_id: d.doc_id.clone(), seq: None }, i as u32, v)?;
    }
    let mut sentence_index = VectorIndex::new(cfg.embedding_dim);
    for (c, v) in chunks.iter().zip(&sentence_vectors) {
        sentence_index.insert(EntryKey { doc_id: c.doc_id.clone(), seq: Some(c.seq) }, by_id[c.doc_id.as_str()] as u32, v)?;
    }
    let sentence_texts = chunks.into_iter().map(|c| c.text).collect();

    let mut catalog = Catalog::new(docs)?;
    catalog.set_topics(&atlas.doc_assignments, &atlas.topics)?;
    Ok(EngineState {
        config: cfg.clone(),
        stats,
        catalog,
        lexical,
        doc_index,
        sentence_index,
        sentence_texts,
        atlas,
        interval_models: models,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    pub matched_field: Field,
    pub title: String,
    pub pub_date: NaiveDate,
    pub journal: String,
    pub authors: Vec<String>,
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub doc_id: String,
    pub x: f64,
    pub y: f64,
    pub topic_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTopic {
    pub topic_id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub size: usize,
    pub parent_id: Option<String>,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapView {
    pub points: Vec<MapPoint>,
    pub topics: Vec<MapTopic>,
    /// Number of documents passing the filter, before the point cap.
    pub total: usize,
    pub truncated: bool,
}

const SNIPPET_CHARS: usize = 200;

fn snippet(body: &str) -> String {
    if body.chars().count() <= SNIPPET_CHARS {
        body.to_string()
    } else {
        let mut s: String = body.chars().take(SNIPPET_CHARS - 1).collect();
        s.push('…');
        s
    }
}

/// A loaded engine with its providers. Read operations take `&self` and
/// may run concurrently.
pub struct Engine {
    state: EngineState,
    embedder: EmbeddingProvider,
    llm: LlmProvider,
    snapshot_id: String,
}

impl Engine {
    pub fn new(state: EngineState, embedder: EmbeddingProvider, llm: LlmProvider, snapshot_id: String) -> Result<Self> {
        if embedder.dimension() != state.config.embedding_dim {
            return Err(Error::invalid("embedder dimension differs from the snapshot"));
        }
        Ok(Engine { state, embedder, llm, snapshot_id })
    }

    /// Engine with providers taken from the state's own configuration.
    pub fn from_state(state: EngineState, snapshot_id: String) -> Result<Self> {
        let embedder = EmbeddingProvider::from_config(&state.config)?;
        let llm = LlmProvider::from_config(&state.config)?;
        Engine::new(state, embedder, llm, snapshot_id)
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.state.config
    }

    pub fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.state.stats
    }

    pub fn catalog(&self) -> &Catalog {
        &self.state.catalog
    }

    pub fn atlas(&self) -> &MergedAtlas {
        &self.state.atlas
    }

    /// Documents passing every predicate of `filter`, including its text query.
    pub fn filter_mask(&self, filter: &Filter) -> Result<DocMask> {
        filter.validate()?;
        let catalog = &self.state.catalog;
        let mut mask = catalog.metadata_mask(filter);
        if let Some(q) = &filter.query {
            let matched: Vec<u32> = match q.mode {
                QueryMode::Lexical => self
                    .state
                    .lexical
                    .score_all(&q.text, Field::Body, Some(&mask))?
                    .into_iter()
                    .filter(|(_, s)| *s > 0.0)
                    .map(|(o, _)| o)
                    .collect(),
                QueryMode::Semantic => {
                    let qv = self.embedder.embed_query(&q.text)?;
                    self.state
                        .doc_index
                        .search(&qv, Some(&mask), self.state.config.semantic_filter_k)?
                        .into_iter()
                        .map(|h| self.state.doc_index.doc_ordinal(h.entry))
                        .collect()
                }
            };
            mask = DocMask::from_ordinals(catalog.len(), matched);
        }
        Ok(mask)
    }

    pub fn filtered_ids(&self, filter: &Filter) -> Result<BTreeSet<String>> {
        Ok(self.state.catalog.ids(&self.filter_mask(filter)?))
    }

    /// Ranked documents for `query`. Semantic search covers the body only.
    pub fn search(
        &self,
        query: &str,
        mode: QueryMode,
        field: Field,
        filter: &Filter,
        k: usize,
        offset: usize,
    ) -> Result<Vec<SearchResult>> {
        if query.trim().is_empty() {
            return Err(Error::invalid("search query is empty"));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mask = self.filter_mask(filter)?;
        let hits: Vec<SearchHit> = match mode {
            QueryMode::Lexical => self.state.lexical.search(query, field, Some(&mask), k, offset)?,
            QueryMode::Semantic => {
                if field != Field::Body {
                    return Err(Error::invalid("semantic search supports field=body only"));
                }
                let qv = self.embedder.embed_query(query)?;
                self.state
                    .doc_index
                    .search(&qv, Some(&mask), k.saturating_add(offset))?
                    .into_iter()
                    .skip(offset)
                    .map(|h| SearchHit { doc_id: h.doc_id, score: h.score, rank: h.rank, matched_field: Field::Body })
                    .collect()
            }
        };
        let catalog = &self.state.catalog;
        Ok(hits
            .into_iter()
            .map(|h| {
                let ord = catalog.ordinal(&h.doc_id).expect("hit refers to a catalogued document");
                let d = catalog.doc(ord);
                SearchResult {
                    snippet: snippet(&d.body),
                    title: d.title.clone(),
                    pub_date: d.pub_date,
                    journal: d.journal.clone(),
                    authors: d.authors.clone(),
                    topic_id: catalog.topic_of(ord).map(String::from),
                    doc_id: h.doc_id,
                    score: h.score,
                    rank: h.rank,
                    matched_field: h.matched_field,
                }
            })
            .collect())
    }

    /// Points for the filtered documents (in corpus order, at most `cap`)
    /// and the full topic hierarchy.
    pub fn map(&self, filter: &Filter, cap: usize) -> Result<MapView> {
        let mask = self.filter_mask(filter)?;
        let catalog = &self.state.catalog;
        let total = mask.count();
        let points = mask
            .ordinals()
            .take(cap)
            .map(|o| {
                let d = catalog.doc(o);
                let c = self.state.atlas.doc_coords.get(&d.doc_id).copied().unwrap_or([0.0, 0.0]);
                MapPoint { doc_id: d.doc_id.clone(), x: c[0], y: c[1], topic_id: catalog.topic_of(o).map(String::from) }
            })
            .collect();
        let topics = self
            .state
            .atlas
            .topics
            .iter()
            .map(|t| MapTopic {
                topic_id: t.topic_id.clone(),
                label: t.label.clone(),
                x: t.coords[0],
                y: t.coords[1],
                size: t.size,
                parent_id: t.parent_id.clone(),
                level: t.level,
            })
            .collect();
        Ok(MapView { points, topics, total, truncated: total > cap })
    }

    pub fn timeline(&self, filter: &Filter, bucket: Bucket) -> Result<Vec<HistogramBin>> {
        let mask = self.filter_mask(filter)?;
        Ok(timeline_histogram(&self.state.catalog, &mask, bucket))
    }

    pub fn answer(&self, req: &QaRequest) -> Result<Answer> {
        if req.query.trim().is_empty() {
            return Err(Error::invalid("question is empty"));
        }
        match req.mode {
            QaMode::Corpus => {
                let atlas = &self.state.atlas;
                let topics: Vec<&Topic> = match &req.topic_ids {
                    Some(ids) if !ids.is_empty() => ids
                        .iter()
                        .map(|id| atlas.topic(id).ok_or_else(|| Error::NotFound(format!("topic {id}"))))
                        .collect::<Result<_>>()?,
                    _ => {
                        let labels: Vec<(String, String)> =
                            atlas.leaves().map(|t| (t.topic_id.clone(), t.label.clone())).collect();
                        let (ids, degraded) =
                            route_corpus_query(&self.llm, &req.query, &labels, self.state.config.embedding_dim)?;
                        let topics: Vec<&Topic> = ids.iter().filter_map(|id| atlas.topic(id)).collect();
                        let mut answer = answer_corpus(&self.llm, &req.query, &topics)?;
                        answer.degraded |= degraded;
                        return Ok(answer);
                    }
                };
                answer_corpus(&self.llm, &req.query, &topics)
            }
            QaMode::Document => {
                let filter = req.filter.clone().unwrap_or_default();
                let mask = self.filter_mask(&filter)?;
                let qv = self.embedder.embed_query(&req.query)?;
                let contexts = retrieve_sentences(
                    &self.state.sentence_index,
                    &self.state.sentence_texts,
                    &qv,
                    &mask,
                    self.state.config.top_k_sentences,
                )?;
                answer_document(&self.llm, &req.query, contexts)
            }
        }
    }
}
