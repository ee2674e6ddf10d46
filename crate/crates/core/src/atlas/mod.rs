//! Unified topic atlas: merges per-interval topic models by centroid
//! similarity, arranges the merged topics into a similarity hierarchy, and
//! lays documents and topics out on a 2D map.

pub mod projection;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::LlmProvider;
use crate::model::{
    cosine_similarity, normalize, normalized_mean, quantize_f32, Document, EngineConfig, Keyword, Topic,
    OUTLIER_TOPIC_ID,
};
use crate::topics::{ctfidf, generate_label, GeneratedLabel, IntervalModel, TermCounts};

pub use projection::{project_fit, refine_layout, ProjectionTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeAction {
    Absorb,
    Create,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub interval_topic_id: String,
    pub merged_topic_id: String,
    /// Best centroid similarity against the pool at decision time
    /// (0 when the pool was empty).
    pub similarity: f64,
    pub action: MergeAction,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergedAtlas {
    /// Leaves first (level 0, outlier topic last among them), then each
    /// hierarchy level in order.
    pub topics: Vec<Topic>,
    pub doc_assignments: BTreeMap<String, String>,
    pub doc_coords: BTreeMap<String, [f64; 2]>,
    pub merge_log: Vec<MergeDecision>,
}

impl MergedAtlas {
    pub fn topic(&self, id: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.topic_id == id)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Topic> {
        self.topics.iter().filter(|t| t.level == 0 && !t.is_outlier())
    }

    pub fn topic_coords(&self) -> BTreeMap<String, [f64; 2]> {
        self.topics.iter().map(|t| (t.topic_id.clone(), t.coords)).collect()
    }

    pub fn max_level(&self) -> u32 {
        self.topics.iter().map(|t| t.level).max().unwrap_or(0)
    }

    pub fn members_of(&self, leaf_id: &str) -> Vec<&str> {
        self.doc_assignments.iter().filter(|(_, t)| t.as_str() == leaf_id).map(|(d, _)| d.as_str()).collect()
    }
}

/// Read access to document text and embeddings by id.
pub struct DocLookup<'a> {
    by_id: HashMap<&'a str, (&'a Document, &'a [f64])>,
    dim: usize,
}

impl<'a> DocLookup<'a> {
    pub fn new(docs: &'a [Document], embeddings: &'a [Vec<f64>]) -> Result<Self> {
        if docs.len() != embeddings.len() {
            return Err(Error::invalid("documents and embeddings differ in length"));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        let by_id = docs.iter().zip(embeddings).map(|(d, v)| (d.doc_id.as_str(), (d, v.as_slice()))).collect();
        Ok(DocLookup { by_id, dim })
    }

    fn get(&self, id: &str) -> Result<(&'a Document, &'a [f64])> {
        self.by_id.get(id).copied().ok_or_else(|| Error::invalid(format!("unknown document {id}")))
    }
}

struct PoolTopic {
    id: String,
    sum: Vec<f64>,
    centroid: Vec<f64>,
    members: Vec<String>,
    counts: TermCounts,
    sources: BTreeSet<String>,
}

/// Chronological greedy merge. Each incoming interval topic joins the pool
/// topic with the highest centroid cosine if that reaches the threshold,
/// else it starts a new merged topic.
pub struct Merger<'a> {
    lookup: &'a DocLookup<'a>,
    threshold: f64,
    pool: Vec<PoolTopic>,
    outliers: BTreeSet<String>,
    outlier_sources: BTreeSet<String>,
    log: Vec<MergeDecision>,
}

impl<'a> Merger<'a> {
    pub fn new(lookup: &'a DocLookup<'a>, threshold: f64) -> Self {
        Merger {
            lookup,
            threshold,
            pool: Vec::new(),
            outliers: BTreeSet::new(),
            outlier_sources: BTreeSet::new(),
            log: Vec::new(),
        }
    }

    pub fn add_model(&mut self, model: &IntervalModel) -> Result<()> {
        let source = model.interval.id();
        for topic in &model.topics {
            let members = model.members(&topic.topic_id);
            let mut sum = vec![0.0; self.lookup.dim];
            let mut counts = TermCounts::default();
            for id in &members {
                let (doc, v) = self.lookup.get(id)?;
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                counts.add_text(&doc.title);
                counts.add_text(&doc.body);
            }
            // earliest pool topic wins ties
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in self.pool.iter().enumerate() {
                let sim = cosine_similarity(&topic.centroid, &p.centroid)?;
                if best.is_none_or(|(_, s)| sim > s) {
                    best = Some((i, sim));
                }
            }
            let members: Vec<String> = members.into_iter().map(String::from).collect();
            match best {
                Some((i, sim)) if sim >= self.threshold => {
                    let p = &mut self.pool[i];
                    for (s, x) in p.sum.iter_mut().zip(&sum) {
                        *s += x;
                    }
                    p.centroid = normalize(&p.sum)?;
                    p.members.extend(members);
                    p.counts.absorb(&counts);
                    p.sources.insert(source.clone());
                    self.log.push(MergeDecision {
                        interval_topic_id: topic.topic_id.clone(),
                        merged_topic_id: p.id.clone(),
                        similarity: sim,
                        action: MergeAction::Absorb,
                    });
                }
                other => {
                    let id = format!("topic-{}", self.pool.len());
                    self.log.push(MergeDecision {
                        interval_topic_id: topic.topic_id.clone(),
                        merged_topic_id: id.clone(),
                        similarity: other.map_or(0.0, |(_, s)| s),
                        action: MergeAction::Create,
                    });
                    self.pool.push(PoolTopic {
                        id,
                        centroid: normalize(&sum)?,
                        sum,
                        members,
                        counts,
                        sources: BTreeSet::from([source.clone()]),
                    });
                }
            }
        }
        if !model.outlier_ids.is_empty() {
            self.outliers.extend(model.outlier_ids.iter().cloned());
            self.outlier_sources.insert(source);
        }
        Ok(())
    }

    /// Leaf topics with keywords recomputed over the final pool and labels
    /// regenerated, followed by the outlier topic when there are outliers.
    pub fn finish(self, top_n: usize, llm: &LlmProvider) -> Result<(MergedAtlas, Vec<TermCounts>)> {
        let refs: Vec<&TermCounts> = self.pool.iter().map(|p| &p.counts).collect();
        let keyword_lists = ctfidf(&refs, top_n);
        let mut atlas = MergedAtlas { merge_log: self.log, ..Default::default() };
        let mut counts = Vec::with_capacity(self.pool.len());
        for (p, keywords) in self.pool.into_iter().zip(keyword_lists) {
            let generated = label_for(llm, &keywords, &p.id)?;
            for m in &p.members {
                atlas.doc_assignments.insert(m.clone(), p.id.clone());
            }
            atlas.topics.push(Topic {
                topic_id: p.id,
                centroid: p.centroid,
                keywords,
                label: generated.label,
                description: generated.description,
                size: p.members.len(),
                parent_id: None,
                level: 0,
                coords: [0.0, 0.0],
                source_intervals: p.sources,
                children: vec![],
                degraded_label: generated.degraded,
            });
            counts.push(p.counts);
        }
        if !self.outliers.is_empty() {
            let vectors: Vec<&[f64]> =
                self.outliers.iter().map(|id| self.lookup.get(id).map(|(_, v)| v)).collect::<Result<_>>()?;
            atlas.topics.push(Topic {
                topic_id: OUTLIER_TOPIC_ID.into(),
                centroid: normalized_mean(vectors, self.lookup.dim)?,
                keywords: vec![],
                label: "Unclustered documents".into(),
                description: "Documents the density clustering left unassigned.".into(),
                size: self.outliers.len(),
                parent_id: None,
                level: 0,
                coords: [0.0, 0.0],
                source_intervals: self.outlier_sources,
                children: vec![],
                degraded_label: false,
            });
            for id in self.outliers {
                atlas.doc_assignments.insert(id, OUTLIER_TOPIC_ID.into());
            }
        }
        Ok((atlas, counts))
    }
}

fn label_for(llm: &LlmProvider, keywords: &[Keyword], fallback: &str) -> Result<GeneratedLabel> {
    if keywords.is_empty() {
        return Ok(GeneratedLabel { label: fallback.to_string(), description: String::new(), degraded: false });
    }
    generate_label(llm, keywords)
}

/// Merges interval models in chronological order into leaf topics.
/// Returns per-leaf term counts, aligned with the non-outlier leaves.
pub fn merge_models(
    models: &[IntervalModel],
    lookup: &DocLookup<'_>,
    threshold: f64,
    top_n: usize,
    llm: &LlmProvider,
) -> Result<(MergedAtlas, Vec<TermCounts>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid("merge threshold must lie in (0, 1]"));
    }
    let mut ordered: Vec<&IntervalModel> = models.iter().collect();
    ordered.sort_by_key(|m| m.interval.start);
    let mut merger = Merger::new(lookup, threshold);
    for m in ordered {
        merger.add_model(m)?;
    }
    merger.finish(top_n, llm)
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if !thresholds.iter().all(|t| *t > 0.0 && *t < 1.0) {
        return Err(Error::invalid("hierarchy thresholds must lie in (0, 1)"));
    }
    if thresholds.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("hierarchy thresholds must be strictly descending"));
    }
    Ok(())
}

/// Connected components of the graph linking nodes whose centroid cosine
/// reaches `threshold`, ordered by smallest member.
pub fn similarity_components(centroids: &[&[f64]], threshold: f64) -> Result<Vec<Vec<usize>>> {
    let n = centroids.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if cosine_similarity(centroids[i], centroids[j])? >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    Ok(out)
}

/// Single-linkage levels above `leaves`, one per threshold. Returns the
/// new parent topics and sets `parent_id` on every child. Singleton
/// components are carried up unchanged as one-child parents.
pub fn build_hierarchy(
    leaves: &mut [Topic],
    leaf_counts: &[TermCounts],
    thresholds: &[f64],
    top_n: usize,
    llm: &LlmProvider,
) -> Result<Vec<Topic>> {
    check_thresholds(thresholds)?;
    if leaf_counts.len() != leaves.len() {
        return Err(Error::invalid("leaf term counts misaligned with leaves"));
    }
    let mut parents: Vec<Topic> = Vec::new();
    // the current level lives either in `leaves` or at the tail of `parents`
    let mut level_range: Option<std::ops::Range<usize>> = None;
    let mut level_counts: Vec<TermCounts> = leaf_counts.to_vec();
    for (i, &theta) in thresholds.iter().enumerate() {
        let level = i as u32 + 1;
        let nodes: Vec<Topic> = match &level_range {
            None => leaves.to_vec(),
            Some(r) => parents[r.clone()].to_vec(),
        };
        if nodes.is_empty() {
            break;
        }
        let centroids: Vec<&[f64]> = nodes.iter().map(|t| t.centroid.as_slice()).collect();
        let comps = similarity_components(&centroids, theta)?;
        let merged_counts: Vec<TermCounts> = comps
            .iter()
            .map(|c| {
                let mut tc = TermCounts::default();
                for &k in c {
                    tc.absorb(&level_counts[k]);
                }
                tc
            })
            .collect();
        let refs: Vec<&TermCounts> = merged_counts.iter().collect();
        let keyword_lists = ctfidf(&refs, top_n);
        let start = parents.len();
        let mut assigned_parent = vec![String::new(); nodes.len()];
        for (k, (comp, keywords)) in comps.iter().zip(keyword_lists).enumerate() {
            let id = format!("level{level}-{k}");
            let topic = if comp.len() == 1 {
                let child = &nodes[comp[0]];
                Topic {
                    topic_id: id.clone(),
                    parent_id: None,
                    level,
                    children: vec![child.topic_id.clone()],
                    ..child.clone()
                }
            } else {
                let dim = nodes[comp[0]].centroid.len();
                let mut sum = vec![0.0; dim];
                for &c in comp {
                    let w = nodes[c].size as f64;
                    for (s, x) in sum.iter_mut().zip(&nodes[c].centroid) {
                        *s += w * x;
                    }
                }
                let generated = label_for(llm, &keywords, &nodes[comp[0]].label)?;
                Topic {
                    topic_id: id.clone(),
                    centroid: normalize(&sum)?,
                    keywords,
                    label: generated.label,
                    description: generated.description,
                    size: comp.iter().map(|&c| nodes[c].size).sum(),
                    parent_id: None,
                    level,
                    coords: [0.0, 0.0],
                    source_intervals: comp.iter().flat_map(|&c| nodes[c].source_intervals.iter().cloned()).collect(),
                    children: comp.iter().map(|&c| nodes[c].topic_id.clone()).collect(),
                    degraded_label: generated.degraded,
                }
            };
            for &c in comp {
                assigned_parent[c] = id.clone();
            }
            parents.push(topic);
        }
        match &level_range {
            None => {
                for (t, p) in leaves.iter_mut().zip(&assigned_parent) {
                    t.parent_id = Some(p.clone());
                }
            }
            Some(r) => {
                for (t, p) in parents[r.clone()].iter_mut().zip(&assigned_parent) {
                    t.parent_id = Some(p.clone());
                }
            }
        }
        level_range = Some(start..parents.len());
        level_counts = merged_counts;
    }
    Ok(parents)
}

/// Fits one 2D projection over all document embeddings and places each
/// topic at the mean position of the documents beneath it.
pub fn layout_atlas(atlas: &mut MergedAtlas, doc_ids: &[String], embeddings: &[Vec<f64>], cfg: &EngineConfig) -> Result<()> {
    if doc_ids.len() != embeddings.len() {
        return Err(Error::invalid("doc ids and embeddings differ in length"));
    }
    let mut coords: Vec<[f64; 2]> = if embeddings.len() >= 2 {
        let t = project_fit(embeddings, 2)?;
        embeddings.iter().map(|v| { let p = t.apply(v); [p[0], p[1]] }).collect()
    } else {
        vec![[0.0, 0.0]; embeddings.len()]
    };
    if cfg.refine_layout {
        refine_layout(&mut coords, embeddings, cfg.refine_neighbors, cfg.refine_iterations, cfg.rng_seed);
    }
    for c in coords.iter_mut() {
        quantize_f32(c);
    }
    if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::invalid("layout produced non-finite coordinates"));
    }
    atlas.doc_coords = doc_ids.iter().cloned().zip(coords).collect();

    // accumulate sums per leaf, then roll up through parents
    let mut sums: HashMap<String, ([f64; 2], usize)> = HashMap::new();
    for (doc, topic) in &atlas.doc_assignments {
        let Some(c) = atlas.doc_coords.get(doc) else { continue };
        let e = sums.entry(topic.clone()).or_insert(([0.0, 0.0], 0));
        e.0[0] += c[0];
        e.0[1] += c[1];
        e.1 += 1;
    }
    let max_level = atlas.max_level();
    for level in 1..=max_level {
        for t in atlas.topics.iter().filter(|t| t.level == level) {
            let mut acc = ([0.0, 0.0], 0);
            for child in &t.children {
                if let Some(s) = sums.get(child) {
                    acc.0[0] += s.0[0];
                    acc.0[1] += s.0[1];
                    acc.1 += s.1;
                }
            }
            sums.insert(t.topic_id.clone(), acc);
        }
    }
    for t in atlas.topics.iter_mut() {
        if let Some((s, n)) = sums.get(&t.topic_id).filter(|(_, n)| *n > 0) {
            let mut c = [s[0] / *n as f64, s[1] / *n as f64];
            quantize_f32(&mut c);
            t.coords = c;
        }
    }
    Ok(())
}
