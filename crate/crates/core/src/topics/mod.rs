//! Per-interval topic discovery: reduce, cluster, extract keywords, label.

pub mod hdbscan;
pub mod keywords;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::atlas::projection::{project_fit, ProjectionTransform};
use crate::error::{Error, Result};
use crate::llm::LlmProvider;
use crate::model::{cosine_similarity, normalized_mean, Document, EngineConfig, TimeInterval, Topic};

pub use keywords::{ctfidf, ctfidf_keywords, generate_label, GeneratedLabel, TermCounts};

/// Result of clustering one interval, as indices into the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub clusters: Vec<Vec<usize>>,
    pub outliers: Vec<usize>,
    pub reducer: Option<ProjectionTransform>,
    /// Too few points for density clustering; everything went into one cluster.
    pub degenerate: bool,
}

/// Reduces to `reduce_dim`, runs density clustering, and returns member
/// indices per cluster. Clusters are ordered by their smallest member index.
pub fn cluster_interval(embeddings: &[(String, Vec<f64>)], cfg: &EngineConfig) -> Result<ClusterAssignment> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::invalid("cannot cluster an empty interval"));
    }
    if n < cfg.min_cluster_size + cfg.min_samples || n < cfg.reduce_dim {
        tracing::info!(points = n, "interval too small for density clustering; using one catch-all topic");
        return Ok(ClusterAssignment { clusters: vec![(0..n).collect()], outliers: vec![], reducer: None, degenerate: true });
    }
    let full: Vec<Vec<f64>> = embeddings.iter().map(|(_, v)| v.clone()).collect();
    let reducer = project_fit(&full, cfg.reduce_dim)?;
    let reduced: Vec<Vec<f64>> = full.iter().map(|v| reducer.apply(v)).collect();
    let result = hdbscan::hdbscan(&reduced, cfg.min_cluster_size, cfg.min_samples)?;

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); result.n_clusters];
    let mut outliers = Vec::new();
    for (i, label) in result.labels.iter().enumerate() {
        match label {
            Some(c) => clusters[*c].push(i),
            None => outliers.push(i),
        }
    }
    clusters.retain(|c| !c.is_empty());
    clusters.sort_by_key(|c| c[0]);

    if cfg.reassign_outliers && !outliers.is_empty() && !clusters.is_empty() {
        let centroids: Vec<Vec<f64>> = clusters
            .iter()
            .map(|c| normalized_mean(c.iter().map(|&i| full[i].as_slice()), full[0].len()))
            .collect::<Result<_>>()?;
        for i in std::mem::take(&mut outliers) {
            let best = centroids
                .iter()
                .enumerate()
                .map(|(k, c)| (k, cosine_similarity(&full[i], c).unwrap_or(-1.0)))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            clusters[best.0].push(i);
        }
        for c in clusters.iter_mut() {
            c.sort_unstable();
        }
    }
    Ok(ClusterAssignment { clusters, outliers, reducer: Some(reducer), degenerate: false })
}

/// Topics discovered in one time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalModel {
    pub interval: TimeInterval,
    pub topics: Vec<Topic>,
    /// doc_id -> interval topic id
    pub assignments: BTreeMap<String, String>,
    pub outlier_ids: BTreeSet<String>,
    pub reducer: Option<ProjectionTransform>,
    pub degenerate: bool,
}

impl IntervalModel {
    pub fn members(&self, topic_id: &str) -> Vec<&str> {
        self.assignments.iter().filter(|(_, t)| t.as_str() == topic_id).map(|(d, _)| d.as_str()).collect()
    }
}

/// Clusters one interval and describes each cluster with keywords and a label.
pub fn build_interval_model(
    interval: TimeInterval,
    docs: &[&Document],
    embeddings: &[&[f64]],
    cfg: &EngineConfig,
    llm: &LlmProvider,
) -> Result<IntervalModel> {
    if docs.len() != embeddings.len() {
        return Err(Error::invalid("documents and embeddings differ in length"));
    }
    let input: Vec<(String, Vec<f64>)> =
        docs.iter().zip(embeddings).map(|(d, v)| (d.doc_id.clone(), v.to_vec())).collect();
    let assignment = cluster_interval(&input, cfg)?;
    let dim = embeddings.first().map_or(0, |v| v.len());

    let counts: Vec<TermCounts> = assignment
        .clusters
        .iter()
        .map(|members| TermCounts::from_docs(members.iter().map(|&i| docs[i])))
        .collect();
    let refs: Vec<&TermCounts> = counts.iter().collect();
    let keyword_lists = ctfidf(&refs, cfg.top_n_keywords);

    let mut topics = Vec::with_capacity(assignment.clusters.len());
    let mut assignments = BTreeMap::new();
    for (k, (members, keywords)) in assignment.clusters.iter().zip(keyword_lists).enumerate() {
        let topic_id = format!("{}#{k}", interval.start);
        let centroid = normalized_mean(members.iter().map(|&i| embeddings[i]), dim)?;
        let generated = if keywords.is_empty() {
            GeneratedLabel { label: format!("Topic {k}"), description: String::new(), degraded: false }
        } else {
            generate_label(llm, &keywords)?
        };
        for &i in members {
            assignments.insert(docs[i].doc_id.clone(), topic_id.clone());
        }
        topics.push(Topic {
            topic_id,
            centroid,
            keywords,
            label: generated.label,
            description: generated.description,
            size: members.len(),
            parent_id: None,
            level: 0,
            coords: [0.0, 0.0],
            source_intervals: BTreeSet::from([interval.id()]),
            children: vec![],
            degraded_label: generated.degraded,
        });
    }
    let outlier_ids = assignment.outliers.iter().map(|&i| docs[i].doc_id.clone()).collect();
    Ok(IntervalModel {
        interval,
        topics,
        assignments,
        outlier_ids,
        reducer: assignment.reducer,
        degenerate: assignment.degenerate,
    })
}
