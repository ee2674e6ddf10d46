//! On-disk snapshot: a manifest with per-file checksums plus one file per
//! structure. Vectors and coordinates are stored as little-endian f32.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::{MergeDecision, MergedAtlas};
use crate::engine::EngineState;
use crate::error::{Error, Result};
use crate::index::{Catalog, EntryKey, LexicalIndex, VectorIndex};
use crate::ingest::CorpusStats;
use crate::model::{Document, EngineConfig, Topic};
use crate::topics::IntervalModel;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const DOCUMENTS: &str = "documents.jsonl";
const STATS: &str = "stats.json";
const LEXICAL: &str = "lexical.json";
const DOC_VECTORS: &str = "doc_vectors.f32";
const SENTENCES: &str = "sentences.jsonl";
const SENTENCE_VECTORS: &str = "sentence_vectors.f32";
const TOPICS: &str = "topics.json";
const ASSIGNMENTS: &str = "assignments.json";
const COORDS: &str = "coords.f32";
const MERGE_LOG: &str = "merge_log.json";
const INTERVALS: &str = "intervals.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub snapshot_id: String,
    pub embedding_dim: usize,
    pub doc_count: usize,
    pub sentence_count: usize,
    pub config: EngineConfig,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Serialize, Deserialize)]
struct SentenceRecord {
    doc_id: String,
    seq: u32,
    text: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn encode_coords(docs: &[Document], atlas: &MergedAtlas) -> Vec<u8> {
    let mut out = Vec::with_capacity(docs.len() * 8);
    for d in docs {
        let c = atlas.doc_coords.get(&d.doc_id).copied().unwrap_or([0.0, 0.0]);
        out.extend_from_slice(&(c[0] as f32).to_le_bytes());
        out.extend_from_slice(&(c[1] as f32).to_le_bytes());
    }
    out
}

/// Serialized files of `state`, keyed by file name.
fn encode_files(state: &EngineState) -> Result<BTreeMap<&'static str, Vec<u8>>> {
    let docs = state.catalog.docs();
    let sentences = state.sentence_index.keys().iter().zip(&state.sentence_texts).map(|(k, text)| SentenceRecord {
        doc_id: k.doc_id.clone(),
        seq: k.seq.unwrap_or(0),
        text: text.clone(),
    });
    let mut files = BTreeMap::new();
    files.insert(DOCUMENTS, jsonl(docs)?);
    files.insert(STATS, serde_json::to_vec(&state.stats)?);
    files.insert(LEXICAL, serde_json::to_vec(&state.lexical)?);
    files.insert(DOC_VECTORS, state.doc_index.encode_vectors());
    files.insert(SENTENCES, jsonl(sentences)?);
    files.insert(SENTENCE_VECTORS, state.sentence_index.encode_vectors());
    files.insert(TOPICS, serde_json::to_vec(&state.atlas.topics)?);
    files.insert(ASSIGNMENTS, serde_json::to_vec(&state.atlas.doc_assignments)?);
    files.insert(COORDS, encode_coords(docs, &state.atlas));
    files.insert(MERGE_LOG, serde_json::to_vec(&state.atlas.merge_log)?);
    files.insert(INTERVALS, serde_json::to_vec(&state.interval_models)?);
    Ok(files)
}

fn snapshot_id(files: &BTreeMap<String, FileEntry>) -> String {
    let mut h = Sha256::new();
    for (name, entry) in files {
        h.update(name.as_bytes());
        h.update(b":");
        h.update(entry.sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn sibling(dir: &Path, tag: &str) -> Result<PathBuf> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::invalid("snapshot path has no final component"))?
        .to_string_lossy();
    Ok(dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id())))
}

/// Writes `state` to `dir`, replacing any snapshot already there. Files go
/// to a temporary sibling first, which is then renamed into place.
pub fn save_snapshot(state: &EngineState, dir: &Path) -> Result<Manifest> {
    let files = encode_files(state)?;
    let entries: BTreeMap<String, FileEntry> = files
        .iter()
        .map(|(name, bytes)| (name.to_string(), FileEntry { sha256: sha256_hex(bytes), bytes: bytes.len() as u64 }))
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        snapshot_id: snapshot_id(&entries),
        embedding_dim: state.config.embedding_dim,
        doc_count: state.catalog.len(),
        sentence_count: state.sentence_index.len(),
        config: state.config.clone(),
        files: entries,
    };

    let tmp = sibling(dir, "tmp")?;
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    for (name, bytes) in &files {
        let mut f = fs::File::create(tmp.join(name))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::write(tmp.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;

    if dir.exists() {
        let old = sibling(dir, "old")?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(dir, &old)?;
        fs::rename(&tmp, dir)?;
        fs::remove_dir_all(&old)?;
    } else {
        if let Some(parent) = dir.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::rename(&tmp, dir)?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|_| Error::CorruptSnapshot("manifest is missing".into()))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptSnapshot(format!("manifest unreadable: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::IncompatibleSnapshot(format!(
            "format version {} (expected {FORMAT_VERSION})",
            version.map_or("missing".to_string(), |v| v.to_string())
        )));
    }
    serde_json::from_value(value).map_err(|e| Error::CorruptSnapshot(format!("manifest unreadable: {e}")))
}

fn read_checked(dir: &Path, manifest: &Manifest, name: &str) -> Result<Vec<u8>> {
    let entry = manifest.files.get(name).ok_or_else(|| Error::CorruptSnapshot(format!("{name} not in manifest")))?;
    let bytes = fs::read(dir.join(name)).map_err(|_| Error::CorruptSnapshot(format!("{name} is missing")))?;
    if bytes.len() as u64 != entry.bytes {
        return Err(Error::CorruptSnapshot(format!("{name}: expected {} bytes, found {}", entry.bytes, bytes.len())));
    }
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::CorruptSnapshot(format!("{name}: checksum mismatch")));
    }
    Ok(bytes)
}

fn parse<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::CorruptSnapshot(format!("{name}: {e}")))
}

fn parse_lines<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Vec<T>> {
    bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| parse(name, l))
        .collect()
}

/// Verifies every file against the manifest, then rebuilds the state.
pub fn load_snapshot(dir: &Path) -> Result<(EngineState, Manifest)> {
    let manifest = read_manifest(dir)?;
    let config = manifest.config.clone();
    let dim = manifest.embedding_dim;
    if config.embedding_dim != dim {
        return Err(Error::CorruptSnapshot("manifest dimension disagrees with its config".into()));
    }
    let read = |name: &str| read_checked(dir, &manifest, name);

    let docs: Vec<Document> = parse_lines(DOCUMENTS, &read(DOCUMENTS)?)?;
    let stats: CorpusStats = parse(STATS, &read(STATS)?)?;
    let lexical: LexicalIndex = parse(LEXICAL, &read(LEXICAL)?)?;
    let doc_keys = docs.iter().map(|d| EntryKey { doc_id: d.doc_id.clone(), seq: None }).collect();
    let doc_index = VectorIndex::decode(dim, doc_keys, (0..docs.len() as u32).collect(), &read(DOC_VECTORS)?)?;

    let sentences: Vec<SentenceRecord> = parse_lines(SENTENCES, &read(SENTENCES)?)?;
    let ordinals: std::collections::HashMap<&str, u32> =
        docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i as u32)).collect();
    let mut keys = Vec::with_capacity(sentences.len());
    let mut doc_ords = Vec::with_capacity(sentences.len());
    let mut texts = Vec::with_capacity(sentences.len());
    for s in sentences {
        let ord = *ordinals
            .get(s.doc_id.as_str())
            .ok_or_else(|| Error::CorruptSnapshot(format!("sentence of unknown document {}", s.doc_id)))?;
        keys.push(EntryKey { doc_id: s.doc_id, seq: Some(s.seq) });
        doc_ords.push(ord);
        texts.push(s.text);
    }
    let sentence_index = VectorIndex::decode(dim, keys, doc_ords, &read(SENTENCE_VECTORS)?)?;

    let topics: Vec<Topic> = parse(TOPICS, &read(TOPICS)?)?;
    let doc_assignments: BTreeMap<String, String> = parse(ASSIGNMENTS, &read(ASSIGNMENTS)?)?;
    let merge_log: Vec<MergeDecision> = parse(MERGE_LOG, &read(MERGE_LOG)?)?;
    let coords = read(COORDS)?;
    if coords.len() != docs.len() * 8 {
        return Err(Error::CorruptSnapshot("coordinate file does not match document count".into()));
    }
    let doc_coords = docs
        .iter()
        .zip(coords.chunks_exact(8))
        .map(|(d, c)| {
            let x = f32::from_le_bytes(c[..4].try_into().expect("4 bytes")) as f64;
            let y = f32::from_le_bytes(c[4..].try_into().expect("4 bytes")) as f64;
            (d.doc_id.clone(), [x, y])
        })
        .collect();
    let interval_models: Vec<IntervalModel> = parse(INTERVALS, &read(INTERVALS)?)?;

    let atlas = MergedAtlas { topics, doc_assignments, doc_coords, merge_log };
    let mut catalog = Catalog::new(docs).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
    catalog
        .set_topics(&atlas.doc_assignments, &atlas.topics)
        .map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
    let state = EngineState {
        config,
        stats,
        catalog,
        lexical,
        doc_index,
        sentence_index,
        sentence_texts: texts,
        atlas,
        interval_models,
    };
    Ok((state, manifest))
}
