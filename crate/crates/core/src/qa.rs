//! Question answering in two modes.
//!
//! Corpus mode routes the question to topics and answers from their
//! labels, keywords and descriptions. Document mode retrieves the most
//! similar sentences of the filtered documents and answers from them with
//! per-document citations.

use serde::{Deserialize, Serialize};

use crate::embed::hash_embed;
use crate::error::{Error, Result};
use crate::index::{DocMask, VectorIndex};
use crate::llm::{prompts, LlmProvider};
use crate::model::{cosine_similarity, Filter, Topic};

/// Minimum similarity for resolving a model-returned label that matches no label exactly.
pub const LABEL_MATCH_THRESHOLD: f64 = 0.5;
const STUB_ANSWER_CONTEXTS: usize = 3;
const STUB_KEYWORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaMode {
    Corpus,
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRequest {
    pub mode: QaMode,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    /// doc_id in document mode, topic_id in corpus mode.
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u32>,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub mode: QaMode,
    pub citations: Vec<String>,
    pub contexts: Vec<Context>,
    pub degraded: bool,
}

fn stub_route(query: &str, labels: &[(String, String)], dim: usize) -> Vec<String> {
    let q = query.to_lowercase();
    let matched: Vec<String> = labels
        .iter()
        .filter(|(_, label)| !label.trim().is_empty() && q.contains(&label.to_lowercase()))
        .map(|(id, _)| id.clone())
        .collect();
    if !matched.is_empty() {
        return matched;
    }
    let qv = hash_embed(query, dim);
    let mut best: Option<(&str, f64)> = None;
    for (id, label) in labels {
        let s = cosine_similarity(&qv, &hash_embed(label, dim)).unwrap_or(-1.0);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| vec![id.to_string()]).unwrap_or_default()
}

/// Resolves model-returned label lines to topic ids: exact match after
/// trimming, else the most similar label if that reaches the threshold.
fn resolve_labels(reply: &str, labels: &[(String, String)], dim: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        if line.is_empty() {
            continue;
        }
        let id = labels.iter().find(|(_, l)| l.trim() == line).map(|(id, _)| id.clone()).or_else(|| {
            let lv = hash_embed(line, dim);
            labels
                .iter()
                .map(|(id, l)| (id, cosine_similarity(&lv, &hash_embed(l, dim)).unwrap_or(-1.0)))
                .fold(None::<(&String, f64)>, |acc, x| match acc {
                    Some(a) if a.1 >= x.1 => Some(a),
                    _ => Some(x),
                })
                .filter(|(_, s)| *s >= LABEL_MATCH_THRESHOLD)
                .map(|(id, _)| id.clone())
        });
        if let Some(id) = id {
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// Picks the topics a corpus-level question is about. Returns the topic
/// ids and whether the stub fallback replaced a failed remote call.
pub fn route_corpus_query(
    llm: &LlmProvider,
    query: &str,
    labels: &[(String, String)],
    dim: usize,
) -> Result<(Vec<String>, bool)> {
    if labels.is_empty() {
        return Err(Error::NoRoute);
    }
    match llm {
        LlmProvider::Stub => Ok((stub_route(query, labels, dim), false)),
        LlmProvider::Remote(remote) => {
            let list = labels.iter().map(|(_, l)| l.as_str()).collect::<Vec<_>>().join("\n");
            let prompt = prompts::render(prompts::ROUTE, &[("labels", &list), ("query", query)]);
            match remote.complete(&prompt) {
                Ok(reply) => {
                    let ids = resolve_labels(&reply, labels, dim);
                    if ids.is_empty() {
                        Ok((stub_route(query, labels, dim), false))
                    } else {
                        Ok((ids, false))
                    }
                }
                Err(e) => {
                    tracing::warn!(error = %e, "routing call failed, using keyword routing");
                    Ok((stub_route(query, labels, dim), true))
                }
            }
        }
    }
}

fn topic_context(t: &Topic) -> Context {
    let kws = t.top_terms(STUB_KEYWORDS).join(", ");
    let text = if t.description.is_empty() {
        format!("{}: {}", t.label, kws)
    } else {
        format!("{}: {}. {}", t.label, kws, t.description)
    };
    Context { source_id: t.topic_id.clone(), seq: None, text, score: 1.0 }
}

pub fn answer_corpus(llm: &LlmProvider, query: &str, topics: &[&Topic]) -> Result<Answer> {
    if topics.is_empty() {
        return Err(Error::NoRoute);
    }
    let contexts: Vec<Context> = topics.iter().map(|t| topic_context(t)).collect();
    let citations: Vec<String> = topics.iter().map(|t| t.topic_id.clone()).collect();
    let stub_text = || {
        topics
            .iter()
            .map(|t| format!("{}: {}", t.label, t.top_terms(STUB_KEYWORDS).join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (text, degraded) = match llm {
        LlmProvider::Stub => (stub_text(), false),
        LlmProvider::Remote(remote) => {
            let block = contexts.iter().map(|c| format!("- {}", c.text)).collect::<Vec<_>>().join("\n");
            let prompt = prompts::render(prompts::CORPUS_ANSWER, &[("contexts", &block), ("query", query)]);
            match remote.complete(&prompt) {
                Ok(t) => (t, false),
                Err(e) => {
                    tracing::warn!(error = %e, "corpus answer call failed, using extractive answer");
                    (stub_text(), true)
                }
            }
        }
    };
    Ok(Answer { text, mode: QaMode::Corpus, citations, contexts, degraded })
}

/// Top-`k` sentences of documents in `allowed` by cosine similarity.
pub fn retrieve_sentences(
    index: &VectorIndex,
    sentence_texts: &[String],
    query_vec: &[f64],
    allowed: &DocMask,
    k: usize,
) -> Result<Vec<Context>> {
    let hits = index.search(query_vec, Some(allowed), k)?;
    if hits.is_empty() {
        return Err(Error::EmptyContext);
    }
    Ok(hits
        .into_iter()
        .map(|h| Context { source_id: h.doc_id, seq: h.seq, text: sentence_texts[h.entry].clone(), score: h.score })
        .collect())
}

fn cited_numbers(reply: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut rest = reply;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        for part in rest[..close].split(',') {
            if let Ok(n) = part.trim().parse::<usize>() {
                out.push(n);
            }
        }
        rest = &rest[close + 1..];
    }
    out
}

fn dedup_in_order(ids: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for id in ids {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

pub fn answer_document(llm: &LlmProvider, query: &str, contexts: Vec<Context>) -> Result<Answer> {
    if contexts.is_empty() {
        return Err(Error::invalid("document answer needs at least one context"));
    }
    let stub = |contexts: &[Context]| {
        let used = &contexts[..contexts.len().min(STUB_ANSWER_CONTEXTS)];
        let text = used.iter().map(|c| format!("{} [{}]", c.text, c.source_id)).collect::<Vec<_>>().join(" ");
        (text, dedup_in_order(used.iter().map(|c| c.source_id.clone())))
    };
    let (text, citations, degraded) = match llm {
        LlmProvider::Stub => {
            let (t, c) = stub(&contexts);
            (t, c, false)
        }
        LlmProvider::Remote(remote) => {
            let block = contexts
                .iter()
                .enumerate()
                .map(|(i, c)| format!("[{}] {}", i + 1, c.text))
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = prompts::render(prompts::DOCUMENT_ANSWER, &[("contexts", &block), ("query", query)]);
            match remote.complete(&prompt) {
                Ok(reply) => {
                    let cited = cited_numbers(&reply)
                        .into_iter()
                        .filter(|n| (1..=contexts.len()).contains(n))
                        .map(|n| contexts[n - 1].source_id.clone());
                    (reply, dedup_in_order(cited), false)
                }
                Err(e) => {
                    tracing::warn!(error = %e, "document answer call failed, using extractive answer");
                    let (t, c) = stub(&contexts);
                    (t, c, true)
                }
            }
        }
    };
    Ok(Answer { text, mode: QaMode::Document, citations, contexts, degraded })
}
