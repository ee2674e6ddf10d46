//! Cluster-level tf-idf keywords and topic labels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::llm::{prompts, LlmProvider};
use crate::model::{Document, Keyword};
use crate::text::{analyze, is_stopword};

pub const MAX_LABEL_CHARS: usize = 60;
pub const MAX_DESCRIPTION_CHARS: usize = 400;

/// Token counts of one cluster's concatenated documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermCounts {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl TermCounts {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tc = TermCounts::default();
        for text in texts {
            tc.add_text(text);
        }
        tc
    }

    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut tc = TermCounts::default();
        for d in docs {
            tc.add_text(&d.title);
            tc.add_text(&d.body);
        }
        tc
    }

    pub fn add_text(&mut self, text: &str) {
        for t in analyze(text) {
            if !is_stopword(&t) {
                *self.counts.entry(t).or_default() += 1;
                self.total += 1;
            }
        }
    }

    pub fn absorb(&mut self, other: &TermCounts) {
        for (t, c) in &other.counts {
            *self.counts.entry(t.clone()).or_default() += c;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Keywords for every cluster at once: `tf(t, c) * ln(1 + C / cf(t))`,
/// top `top_n` by (weight desc, term asc).
pub fn ctfidf(clusters: &[&TermCounts], top_n: usize) -> Vec<Vec<Keyword>> {
    let n_clusters = clusters.len() as f64;
    let mut cluster_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clusters {
        for t in c.counts.keys() {
            *cluster_freq.entry(t.as_str()).or_default() += 1;
        }
    }
    clusters
        .iter()
        .map(|c| {
            if c.total == 0 {
                return Vec::new();
            }
            let mut kws: Vec<Keyword> = c
                .counts
                .iter()
                .map(|(t, &count)| {
                    let cf = cluster_freq[t.as_str()] as f64;
                    let tf = count as f64 / c.total as f64;
                    Keyword { term: t.clone(), weight: tf * (1.0 + n_clusters / cf).ln() }
                })
                .collect();
            kws.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.term.cmp(&b.term)));
            kws.truncate(top_n);
            kws
        })
        .collect()
}

/// Keywords of `topic_docs` against the cluster collection `all_topics_docs`.
pub fn ctfidf_keywords(topic_docs: &[Document], all_topics_docs: &[Vec<Document>], top_n: usize) -> Result<Vec<Keyword>> {
    if topic_docs.is_empty() {
        return Err(Error::invalid("topic has no documents"));
    }
    let target = TermCounts::from_docs(topic_docs);
    let others: Vec<TermCounts> = all_topics_docs
        .iter()
        .filter(|docs| docs.as_slice() != topic_docs)
        .map(TermCounts::from_docs)
        .collect();
    let mut all: Vec<&TermCounts> = vec![&target];
    all.extend(others.iter());
    Ok(ctfidf(&all, top_n).swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedLabel {
    pub label: String,
    pub description: String,
    pub degraded: bool,
}

fn truncate_chars(s: &str, max: usize) -> String {
    let s = s.trim();
    if s.chars().count() <= max {
        return s.to_string();
    }
    let mut out: String = s.chars().take(max - 1).collect();
    out = out.trim_end().to_string();
    out.push('…');
    out
}

fn stub_label(keywords: &[Keyword]) -> (String, String) {
    let terms: Vec<&str> = keywords.iter().map(|k| k.term.as_str()).collect();
    let label = terms.iter().take(3).copied().collect::<Vec<_>>().join(" / ");
    let description = format!("Documents about: {}", terms.iter().take(10).copied().collect::<Vec<_>>().join(", "));
    (label, description)
}

fn parse_label_reply(reply: &str) -> Option<(String, String)> {
    let mut label = None;
    let mut description = String::new();
    for line in reply.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("Label:") {
            label = Some(rest.trim().trim_matches('"').to_string());
        } else if let Some(rest) = line.strip_prefix("Description:") {
            description = rest.trim().to_string();
        }
    }
    label.filter(|l| !l.is_empty()).map(|l| (l, description))
}

/// Label and description for a cluster from its keywords. A failed remote
/// call falls back to the stub output and sets `degraded`.
pub fn generate_label(llm: &LlmProvider, keywords: &[Keyword]) -> Result<GeneratedLabel> {
    if keywords.is_empty() {
        return Err(Error::invalid("label generation needs at least one keyword"));
    }
    let (label, description, degraded) = match llm {
        LlmProvider::Stub => {
            let (l, d) = stub_label(keywords);
            (l, d, false)
        }
        LlmProvider::Remote(remote) => {
            let list = keywords.iter().map(|k| k.term.as_str()).collect::<Vec<_>>().join(", ");
            let prompt = prompts::render(prompts::LABEL, &[("keywords", &list)]);
            match remote.complete(&prompt).ok().and_then(|r| parse_label_reply(&r)) {
                Some((l, d)) => (l, d, false),
                None => {
                    tracing::warn!("label generation failed, using keyword label");
                    let (l, d) = stub_label(keywords);
                    (l, d, true)
                }
            }
        }
    };
    Ok(GeneratedLabel {
        label: truncate_chars(&label, MAX_LABEL_CHARS),
        description: truncate_chars(&description, MAX_DESCRIPTION_CHARS),
        degraded,
    })
}
