//! Unit embeddings for documents and sentences.
//!
//! Two providers sit behind [`EmbeddingProvider`]: a deterministic
//! feature-hashing embedder used offline and in tests, and an HTTP client
//! for an external embedding service speaking
//! `POST {model, inputs: [..]} -> {vectors: [[..]]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize, quantize_f32, Document, RemoteConfig, SentenceChunk};
use crate::text::{analyze, stable_hash};

const BIGRAM_WEIGHT: f64 = 0.5;

/// Signed feature hashing over unigrams (weight 1) and bigrams (weight 0.5).
/// Text without tokens maps to the reserved vector `(1, 0, .., 0)`.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 2, "embedding dimension must be at least 2");
    let tokens = analyze(text);
    let mut v = vec![0.0; dim];
    if tokens.is_empty() {
        v[0] = 1.0;
        return v;
    }
    let mut add = |feature: &str, weight: f64| {
        let h = stable_hash(feature.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign * weight;
    };
    for t in &tokens {
        add(t, 1.0);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]), BIGRAM_WEIGHT);
    }
    match normalize(&v) {
        Ok(mut unit) => {
            quantize_f32(&mut unit);
            unit
        }
        // every feature cancelled out
        Err(_) => {
            let mut reserved = vec![0.0; dim];
            reserved[0] = 1.0;
            reserved
        }
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hash { dim: usize },
    Remote(RemoteEmbedder),
}

impl EmbeddingProvider {
    pub fn hash(dim: usize) -> Self {
        EmbeddingProvider::Hash { dim }
    }

    pub fn from_config(cfg: &crate::model::EngineConfig) -> Result<Self> {
        match &cfg.embedder {
            Some(remote) if !remote.endpoint.is_empty() => {
                Ok(EmbeddingProvider::Remote(RemoteEmbedder::new(remote.clone(), cfg.embedding_dim)?))
            }
            _ => Ok(EmbeddingProvider::hash(cfg.embedding_dim)),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::Hash { dim } => *dim,
            EmbeddingProvider::Remote(r) => r.dim,
        }
    }

    pub fn embed_query(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = self.embed_texts(&["query".to_string()], &[text.to_string()])?;
        Ok(out.pop().expect("one vector per input"))
    }

    /// Embeds `texts` in order; `ids` name the inputs in error reports.
    pub fn embed_texts(&self, ids: &[String], texts: &[String]) -> Result<Vec<Vec<f64>>> {
        debug_assert_eq!(ids.len(), texts.len());
        match self {
            EmbeddingProvider::Hash { dim } => Ok(texts.iter().map(|t| hash_embed(t, *dim)).collect()),
            EmbeddingProvider::Remote(r) => r.embed_all(ids, texts),
        }
    }
}

/// Document vectors from `title + " " + body`, order-aligned with `docs`.
pub fn embed_documents(docs: &[Document], provider: &EmbeddingProvider) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let texts: Vec<String> = docs.iter().map(Document::embedding_text).collect();
    provider.embed_texts(&ids, &texts)
}

pub fn embed_sentences(chunks: &[SentenceChunk], provider: &EmbeddingProvider) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<String> = chunks.iter().map(|c| format!("{}#{}", c.doc_id, c.seq)).collect();
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    provider.embed_texts(&ids, &texts)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    cfg: RemoteConfig,
    dim: usize,
    client: reqwest::blocking::Client,
    attempts: u32,
    backoff: Duration,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig, dim: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::ProviderUnavailable { message: e.to_string(), failed_ids: vec![] })?;
        Ok(Self { cfg, dim, client, attempts: 3, backoff: Duration::from_millis(500) })
    }

    /// Overrides the retry schedule (attempt count and first backoff delay).
    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    fn embed_all(&self, ids: &[String], texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let batch = self.cfg.batch_size.max(1);
        let batches: Vec<(usize, &[String])> = texts.chunks(batch).enumerate().collect();
        let mut results: Vec<Option<Result<Vec<Vec<f64>>>>> = (0..batches.len()).map(|_| None).collect();
        for wave in batches.chunks(self.cfg.max_in_flight.max(1)) {
            let outputs: Vec<(usize, Result<Vec<Vec<f64>>>)> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&(i, chunk)| (i, s.spawn(move || self.embed_batch_with_retry(chunk))))
                    .collect();
                handles
                    .into_iter()
                    .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err(unavailable("embedding worker panicked")))))
                    .collect()
            });
            for (i, r) in outputs {
                results[i] = Some(r);
            }
        }
        let mut out = Vec::with_capacity(texts.len());
        let mut failed = Vec::new();
        let mut last_error = String::new();
        for (i, r) in results.into_iter().enumerate() {
            match r.expect("every batch ran") {
                Ok(vs) => out.extend(vs),
                Err(e) => {
                    last_error = e.to_string();
                    let lo = i * batch;
                    let hi = (lo + batch).min(ids.len());
                    failed.extend_from_slice(&ids[lo..hi]);
                }
            }
        }
        if !failed.is_empty() {
            return Err(Error::ProviderUnavailable {
                message: format!("embedding service failed for {} inputs: {last_error}", failed.len()),
                failed_ids: failed,
            });
        }
        Ok(out)
    }

    fn embed_batch_with_retry(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.embed_batch(texts) {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= self.attempts => return Err(e),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "embedding request failed, retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp = self
            .client
            .post(&self.cfg.endpoint)
            .json(&EmbedRequest { model: &self.cfg.model, inputs: texts })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| unavailable(e.to_string()))?;
        let body: EmbedResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(unavailable(format!(
                "service returned {} vectors for {} inputs",
                body.vectors.len(),
                texts.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(unavailable(format!("vector of dimension {} (expected {})", v.len(), self.dim)));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(unavailable("non-finite vector component"));
                }
                let mut unit = normalize(&v).map_err(|_| unavailable("zero vector from service"))?;
                quantize_f32(&mut unit);
                Ok(unit)
            })
            .collect()
    }
}

fn unavailable(message: impl Into<String>) -> Error {
    Error::ProviderUnavailable { message: message.into(), failed_ids: vec![] }
}
