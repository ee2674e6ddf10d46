//! Exact cosine-similarity scan over unit vectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::DocMask;
use crate::error::{Error, Result};
use crate::model::{all_finite, dot, l2_norm};

/// Identifies one vector: a document, or one sentence of it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntryKey {
    pub doc_id: String,
    pub seq: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorHit {
    pub doc_id: String,
    pub seq: Option<u32>,
    pub entry: usize,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    keys: Vec<EntryKey>,
    /// Ordinal of the owning document in the catalog, for filter masks.
    doc_ords: Vec<u32>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex { dim, keys: Vec::new(), doc_ords: Vec::new(), data: Vec::new(), norms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[EntryKey] {
        &self.keys
    }

    pub fn doc_ordinal(&self, entry: usize) -> u32 {
        self.doc_ords[entry]
    }

    pub fn vector(&self, entry: usize) -> &[f64] {
        &self.data[entry * self.dim..(entry + 1) * self.dim]
    }

    pub fn insert(&mut self, key: EntryKey, doc_ord: u32, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!("vector dimension {} != index dimension {}", v.len(), self.dim)));
        }
        let norm = l2_norm(v);
        if !all_finite(v) || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("vector for {key:?} is not a finite unit vector")));
        }
        self.keys.push(key);
        self.doc_ords.push(doc_ord);
        self.data.extend_from_slice(v);
        self.norms.push(norm);
        Ok(())
    }

    fn cmp_hits(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        b.1.total_cmp(&a.1).then_with(|| self.keys[a.0].cmp(&self.keys[b.0]))
    }

    /// Exact top-`k` by cosine similarity, ties by (doc_id, seq) ascending.
    pub fn search(&self, q: &[f64], allowed: Option<&DocMask>, k: usize) -> Result<Vec<VectorHit>> {
        if q.len() != self.dim {
            return Err(Error::invalid(format!("query dimension {} != index dimension {}", q.len(), self.dim)));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let qn = l2_norm(q);
        if qn == 0.0 {
            return Err(Error::invalid("zero query vector"));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| allowed.is_none_or(|m| m.contains(self.doc_ords[i])))
            .map(|i| (i, (dot(q, self.vector(i)) / (qn * self.norms[i])).clamp(-1.0, 1.0)))
            .collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, |a, b| self.cmp_hits(a, b));
            scored.truncate(k);
        }
        scored.sort_by(|a, b| self.cmp_hits(a, b));
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (i, score))| VectorHit {
                doc_id: self.keys[i].doc_id.clone(),
                seq: self.keys[i].seq,
                entry: i,
                score,
                rank: rank + 1,
            })
            .collect())
    }

    /// Little-endian f32 encoding of all vectors, entry-major.
    pub fn encode_vectors(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(dim: usize, keys: Vec<EntryKey>, doc_ords: Vec<u32>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != keys.len() * dim * 4 || keys.len() != doc_ords.len() {
            return Err(Error::CorruptSnapshot("vector file size does not match entry count".into()));
        }
        let mut ix = VectorIndex::new(dim);
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        for ((key, ord), v) in keys.into_iter().zip(doc_ords).zip(data.chunks(dim.max(1))) {
            ix.insert(key, ord, v).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        }
        Ok(ix)
    }

    pub fn doc_ordinals(&self) -> &[u32] {
        &self.doc_ords
    }
}
