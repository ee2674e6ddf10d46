//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 8`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Display;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request;
use chrono::NaiveDate;
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use tower::ServiceExt;

use atlas_core::atlas::{build_hierarchy, merge_models, DocLookup, MergeAction};
use atlas_core::embed::{hash_embed, EmbeddingProvider};
use atlas_core::index::{EntryKey, Field, LexicalIndex, VectorIndex};
use atlas_core::ingest::{chunk_documents, corpus_stats, partition_intervals};
use atlas_core::llm::LlmProvider;
use atlas_core::qa::{retrieve_sentences, QaMode, QaRequest};
use atlas_core::snapshot::{load_snapshot, save_snapshot};
use atlas_core::synth::{generate_documents, SynthConfig, THEMES};
use atlas_core::topics::{build_interval_model, cluster_interval, TermCounts};
use atlas_core::{build_state, Document, Engine, EngineConfig, EngineState, Error, Filter, FilterQuery, QueryMode, Topic};
use atlas_gateway::{router, AppState, GatewayConfig};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($arg)+));
        }
    };
}

fn e<E: Display>(err: E) -> String {
    err.to_string()
}

const DIM: usize = 64;

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 9] = [
        (1, "ranking oracle equivalence", ranking_oracles),
        (2, "clustering recovery", clustering_recovery),
        (3, "federated merge", federated_merge),
        (4, "hierarchy soundness", hierarchy_soundness),
        (5, "document QA attribution", document_qa),
        (6, "corpus-mode routing", corpus_routing),
        (7, "determinism and persistence", determinism),
        (8, "scaled vector latency", scaled_latency),
        (9, "end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&str> = THEMES.iter().flat_map(|t| t.terms.iter().chain(t.title_terms)).copied().collect();
    words.extend(["we", "study", "patients", "cohort", "unrelatedword", "zebrafish"]);
    words.sort_unstable();
    words.dedup();
    words
}

fn random_query(rng: &mut ChaCha8Rng, vocab: &[&str]) -> String {
    let n = rng.gen_range(1..=4);
    (0..n).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Brute-force BM25 over raw token lists, distinct query terms, smoothed idf.
fn bm25_oracle(texts: &[(String, String)], query: &str, k1: f64, b: f64, k: usize) -> Vec<(String, f64)> {
    let docs: Vec<(&str, Vec<String>)> = texts.iter().map(|(id, t)| (id.as_str(), tokens(t))).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut terms: Vec<String> = Vec::new();
    for t in tokens(query) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, toks)| {
            let mut score = 0.0;
            for term in &terms {
                let tf = toks.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|(_, d)| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg));
            }
            (id.to_string(), score)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Brute-force cosine ranking, ties by (doc_id, seq).
fn vector_oracle<'a>(
    entries: impl Iterator<Item = (&'a str, u32, &'a [f64])>,
    q: &[f64],
    k: usize,
) -> Vec<(String, u32, f64)> {
    let mut scored: Vec<(String, u32, f64)> = entries.map(|(d, s, v)| (d.to_string(), s, cosine(q, v))).collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored
}

fn ranking_oracles() -> Outcome {
    let start = Instant::now();
    let cfg = EngineConfig { embedding_dim: DIM, ..Default::default() };
    let docs = generate_documents(&SynthConfig { docs: 1000, days: 30, seed: 11, ..Default::default() });
    let lexical = LexicalIndex::build(&docs, cfg.bm25_k1, cfg.bm25_b);
    let chunks = chunk_documents(&docs);
    let ord: HashMap<&str, u32> = docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i as u32)).collect();
    let vectors: Vec<Vec<f64>> = chunks.iter().map(|c| hash_embed(&c.text, DIM)).collect();
    let mut index = VectorIndex::new(DIM);
    for (c, v) in chunks.iter().zip(&vectors) {
        index.insert(EntryKey { doc_id: c.doc_id.clone(), seq: Some(c.seq) }, ord[c.doc_id.as_str()], v).map_err(e)?;
    }
    let bodies: Vec<(String, String)> = docs.iter().map(|d| (d.doc_id.clone(), d.body.clone())).collect();
    let titles: Vec<(String, String)> = docs.iter().map(|d| (d.doc_id.clone(), d.title.clone())).collect();

    let vocab = vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut compared = 0;
    for _ in 0..100 {
        let query = random_query(&mut rng, &vocab);
        for (field, texts) in [(Field::Body, &bodies), (Field::Title, &titles)] {
            let got = lexical.search(&query, field, None, 10, 0).map_err(e)?;
            let want = bm25_oracle(texts, &query, cfg.bm25_k1, cfg.bm25_b, 10);
            let got_ids: Vec<&str> = got.iter().map(|h| h.doc_id.as_str()).collect();
            let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
            ensure!(got_ids == want_ids, "bm25 {field:?} '{query}': {got_ids:?} != {want_ids:?}");
            for (h, (_, s)) in got.iter().zip(&want) {
                ensure!((h.score - s).abs() < 1e-9, "bm25 score {} != {s}", h.score);
            }
            compared += 1;
        }
        let q = hash_embed(&query, DIM);
        let got = index.search(&q, None, 10).map_err(e)?;
        let want = vector_oracle(chunks.iter().zip(&vectors).map(|(c, v)| (c.doc_id.as_str(), c.seq, v.as_slice())), &q, 10);
        let got_keys: Vec<(&str, u32)> = got.iter().map(|h| (h.doc_id.as_str(), h.seq.unwrap())).collect();
        let want_keys: Vec<(&str, u32)> = want.iter().map(|(d, s, _)| (d.as_str(), *s)).collect();
        ensure!(got_keys == want_keys, "vector '{query}': {got_keys:?} != {want_keys:?}");
        compared += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{} docs, {} sentences, {compared} rankings identical to brute force", docs.len(), chunks.len()))
}

/// Three isotropic Gaussian blobs on orthogonal axes with pairwise center
/// distance `separation * sigma`.
fn blobs(rng: &mut ChaCha8Rng, per_blob: usize, separation: f64) -> (Vec<Vec<f64>>, Vec<i64>) {
    let sigma = 0.05;
    let scale = separation * sigma / 2f64.sqrt();
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for c in 0..3 {
        for _ in 0..per_blob {
            points.push((0..DIM).map(|i| if i == c { scale } else { 0.0 } + noise.sample(rng)).collect());
            truth.push(c as i64);
        }
    }
    (points, truth)
}

/// Clustering recovery runs at 10 sigma. The merge check needs every point
/// assigned; at 10 sigma a few tail points per thousand fall out as noise,
/// so it runs at 12.
const SEPARATION: f64 = 10.0;
const MERGE_SEPARATION: f64 = 12.0;

/// Adjusted Rand index; outliers form their own class.
fn ari(a: &[i64], b: &[i64]) -> f64 {
    let mut table: HashMap<(i64, i64), f64> = HashMap::new();
    let mut ra: HashMap<i64, f64> = HashMap::new();
    let mut rb: HashMap<i64, f64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((*x, *y)).or_default() += 1.0;
        *ra.entry(*x).or_default() += 1.0;
        *rb.entry(*y).or_default() += 1.0;
    }
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.values().map(|&x| c2(x)).sum();
    let sa: f64 = ra.values().map(|&x| c2(x)).sum();
    let sb: f64 = rb.values().map(|&x| c2(x)).sum();
    let expected = sa * sb / c2(a.len() as f64);
    (index - expected) / (0.5 * (sa + sb) - expected)
}

fn clustering_recovery() -> Outcome {
    let cfg = EngineConfig { embedding_dim: DIM, ..Default::default() };
    let mut worst = f64::INFINITY;
    let mut outliers = 0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (points, truth) = blobs(&mut rng, 150, SEPARATION);
        let n = points.len();
        let input: Vec<(String, Vec<f64>)> = points.into_iter().enumerate().map(|(i, v)| (format!("p{i}"), v)).collect();
        let out = cluster_interval(&input, &cfg).map_err(e)?;
        ensure!(out.clusters.len() == 3, "seed {seed}: {} topics", out.clusters.len());
        let mut seen = vec![0usize; n];
        for &i in out.clusters.iter().flatten().chain(&out.outliers) {
            seen[i] += 1;
        }
        ensure!(seen.iter().all(|&c| c == 1), "seed {seed}: partition property violated");
        let mut labels = vec![-1i64; n];
        for (k, members) in out.clusters.iter().enumerate() {
            for &i in members {
                labels[i] = k as i64;
            }
        }
        let score = ari(&labels, &truth);
        ensure!(score >= 0.95, "seed {seed}: ARI {score:.4}");
        worst = worst.min(score);
        outliers += out.outliers.len();
    }
    Ok(format!("5 seeds x 450 points at {SEPARATION} sigma: 3 topics each, min ARI {worst:.4}, {outliers} outliers total"))
}

fn federated_merge() -> Outcome {
    let mut absorbs = 0;
    for seed in 0..5 {
        absorbs += merge_case(seed).map_err(|m| format!("seed {seed}: {m}"))?;
    }
    Ok(format!("5 seeds at {MERGE_SEPARATION} sigma: 3 merged topics over 2 intervals each, sizes sum to 900, {absorbs} absorbs in total"))
}

fn merge_case(seed: u64) -> Result<usize, String> {
    let cfg = EngineConfig { embedding_dim: DIM, ..Default::default() };
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["alpha", "beta", "gamma"];
    let mut docs = Vec::new();
    let mut vectors = Vec::new();
    for half in 0..2 {
        let (points, truth) = blobs(&mut rng, 150, MERGE_SEPARATION);
        for (i, (p, c)) in points.into_iter().zip(truth).enumerate() {
            let day = half * 15 + rng.gen_range(0..15);
            docs.push(Document {
                doc_id: format!("h{half}-{i:03}"),
                title: format!("{} report {i}", words[c as usize]),
                body: format!("{} signal measured. Sample {i} of group {}.", words[c as usize], words[c as usize]),
                pub_date: start + chrono::Duration::days(day),
                journal: "J".into(),
                authors: vec![],
            });
            vectors.push(p);
        }
    }
    let emb: HashMap<&str, &[f64]> = docs.iter().zip(&vectors).map(|(d, v)| (d.doc_id.as_str(), v.as_slice())).collect();
    let intervals = partition_intervals(&docs, 15).map_err(e)?;
    ensure!(intervals.len() == 2, "{} intervals", intervals.len());
    let mut models = Vec::new();
    for (interval, members) in &intervals {
        let refs: Vec<&Document> = members.iter().collect();
        let vecs: Vec<&[f64]> = members.iter().map(|d| emb[d.doc_id.as_str()]).collect();
        models.push(build_interval_model(*interval, &refs, &vecs, &cfg, &LlmProvider::Stub).map_err(e)?);
    }
    let lookup = DocLookup::new(&docs, &vectors).map_err(e)?;
    let (atlas, _) = merge_models(&models, &lookup, 0.8, cfg.top_n_keywords, &LlmProvider::Stub).map_err(e)?;
    let merged: Vec<&Topic> = atlas.leaves().collect();
    ensure!(merged.len() == 3, "{} merged topics", merged.len());
    for t in &merged {
        ensure!(t.source_intervals.len() == 2, "{} has sources {:?}", t.topic_id, t.source_intervals);
    }
    let merged_total: usize = merged.iter().map(|t| t.size).sum();
    let outliers = atlas.topics.iter().filter(|t| t.is_outlier()).map(|t| t.size).sum::<usize>();
    ensure!(merged_total + outliers == 900, "sizes {merged_total} + outliers {outliers} != 900");
    let absorbs = atlas.merge_log.iter().filter(|d| d.action == MergeAction::Absorb).count();
    ensure!(absorbs >= 3, "{absorbs} absorb decisions");
    ensure!(outliers == 0, "{outliers} documents fell out as outliers");
    Ok(absorbs)
}

/// Connected components by depth-first search over the thresholded graph.
fn components_oracle(centroids: &[Vec<f64>], theta: f64) -> Vec<Vec<usize>> {
    let n = centroids.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut stack = vec![s];
        let mut comp = Vec::new();
        seen[s] = true;
        while let Some(x) = stack.pop() {
            comp.push(x);
            for y in 0..n {
                if !seen[y] && cosine(&centroids[x], &centroids[y]) >= theta {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn hierarchy_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 16;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut levels_checked = 0;
    let mut merged_groups = 0;
    for case in 0..50 {
        let n = rng.gen_range(2..40);
        let anchors: Vec<Vec<f64>> =
            (0..rng.gen_range(1..6)).map(|_| unit(&(0..dim).map(|_| normal.sample(&mut rng)).collect::<Vec<_>>())).collect();
        let spread = rng.gen_range(0.1..0.6);
        let mut leaves: Vec<Topic> = (0..n)
            .map(|i| {
                let a = anchors.choose(&mut rng).unwrap();
                let v: Vec<f64> = a.iter().map(|x| x + spread * normal.sample(&mut rng) / (dim as f64).sqrt()).collect();
                Topic {
                    topic_id: format!("leaf-{i}"),
                    centroid: unit(&v),
                    keywords: vec![],
                    label: format!("leaf {i}"),
                    description: String::new(),
                    size: rng.gen_range(1..100),
                    parent_id: None,
                    level: 0,
                    coords: [0.0, 0.0],
                    source_intervals: BTreeSet::new(),
                    children: vec![],
                    degraded_label: false,
                }
            })
            .collect();
        let counts: Vec<TermCounts> = (0..n).map(|i| TermCounts::from_texts([format!("term{i} shared").as_str()])).collect();
        let thresholds = if case % 2 == 0 { vec![0.8, 0.6] } else { vec![0.9, 0.7, 0.5] };
        let parents = build_hierarchy(&mut leaves, &counts, &thresholds, 5, &LlmProvider::Stub).map_err(e)?;

        let mut leafsets: HashMap<String, BTreeSet<String>> =
            leaves.iter().map(|t| (t.topic_id.clone(), BTreeSet::from([t.topic_id.clone()]))).collect();
        for p in &parents {
            ensure!(((p.centroid.iter().map(|x| x * x).sum::<f64>()).sqrt() - 1.0).abs() < 1e-6, "{} not unit", p.topic_id);
            let set: BTreeSet<String> = p.children.iter().flat_map(|c| leafsets[c].clone()).collect();
            leafsets.insert(p.topic_id.clone(), set);
        }
        ensure!(leaves.iter().all(|t| t.parent_id.is_some()), "case {case}: leaf without parent");

        // oracle: nodes carry (centroid, size, leaf set) up the levels
        let mut nodes: Vec<(Vec<f64>, usize, BTreeSet<String>)> =
            leaves.iter().map(|t| (t.centroid.clone(), t.size, BTreeSet::from([t.topic_id.clone()]))).collect();
        for (i, &theta) in thresholds.iter().enumerate() {
            let level = i as u32 + 1;
            let centroids: Vec<Vec<f64>> = nodes.iter().map(|n| n.0.clone()).collect();
            let comps = components_oracle(&centroids, theta);
            nodes = comps
                .iter()
                .map(|c| {
                    let mut sum = vec![0.0; dim];
                    for &k in c {
                        for (s, x) in sum.iter_mut().zip(&nodes[k].0) {
                            *s += nodes[k].1 as f64 * x;
                        }
                    }
                    let leaves: BTreeSet<String> = c.iter().flat_map(|&k| nodes[k].2.clone()).collect();
                    (unit(&sum), c.iter().map(|&k| nodes[k].1).sum(), leaves)
                })
                .collect();
            let want: BTreeSet<BTreeSet<String>> = nodes.iter().map(|n| n.2.clone()).collect();
            let got: BTreeSet<BTreeSet<String>> =
                parents.iter().filter(|p| p.level == level).map(|p| leafsets[&p.topic_id].clone()).collect();
            ensure!(got == want, "case {case} level {level}: components differ");
            merged_groups += want.iter().filter(|s| s.len() > 1).count();
            levels_checked += 1;
        }
    }
    Ok(format!("50 leaf sets, {levels_checked} levels equal to brute-force components ({merged_groups} multi-leaf groups)"))
}

fn shared_state() -> &'static EngineState {
    static STATE: OnceLock<EngineState> = OnceLock::new();
    STATE.get_or_init(|| {
        let cfg = EngineConfig { embedding_dim: DIM, ..Default::default() };
        let docs = generate_documents(&SynthConfig { docs: 800, days: 60, seed: 17, ..Default::default() });
        let stats = corpus_stats(&docs, cfg.interval_days, 0, 0).unwrap();
        build_state(docs, stats, &cfg, &EmbeddingProvider::hash(DIM), &LlmProvider::Stub).unwrap()
    })
}

fn shared_engine() -> Engine {
    Engine::new(shared_state().clone(), EmbeddingProvider::hash(DIM), LlmProvider::Stub, "acceptance".into()).unwrap()
}

fn random_filter(rng: &mut ChaCha8Rng, state: &EngineState, vocab: &[&str]) -> Filter {
    let (lo, hi) = (state.stats.min_date, state.stats.max_date);
    let span = (hi - lo).num_days();
    let mut f = Filter::default();
    if rng.gen_bool(0.5) {
        let a = rng.gen_range(0..=span);
        let b = rng.gen_range(a..=span);
        f.date_from = Some(lo + chrono::Duration::days(a));
        if rng.gen_bool(0.7) {
            f.date_to = Some(lo + chrono::Duration::days(b));
        }
    }
    if rng.gen_bool(0.4) {
        let ids: Vec<&str> = state.atlas.topics.iter().map(|t| t.topic_id.as_str()).collect();
        let n = rng.gen_range(1..=3);
        f.topic_ids = Some(ids.choose_multiple(rng, n).map(|s| s.to_string()).collect());
    }
    if rng.gen_bool(0.3) {
        let theme = THEMES.choose(rng).unwrap();
        f.title_keyword = Some(theme.title_terms.choose(rng).unwrap().to_uppercase());
    }
    if rng.gen_bool(0.3) {
        let mode = if rng.gen_bool(0.5) { QueryMode::Lexical } else { QueryMode::Semantic };
        f.query = Some(FilterQuery { text: random_query(rng, vocab), mode });
    }
    f
}

/// Filter semantics computed from the raw documents and the topic forest.
fn filter_oracle(state: &EngineState, f: &Filter) -> BTreeSet<String> {
    let parent: HashMap<&str, Option<&str>> =
        state.atlas.topics.iter().map(|t| (t.topic_id.as_str(), t.parent_id.as_deref())).collect();
    let lineage = |leaf: &str| {
        let mut chain = vec![leaf.to_string()];
        let mut cur = leaf;
        while let Some(Some(p)) = parent.get(cur) {
            chain.push(p.to_string());
            cur = p;
        }
        chain
    };
    let mut pass: Vec<&Document> = state
        .catalog
        .docs()
        .iter()
        .filter(|d| f.date_from.is_none_or(|x| d.pub_date >= x))
        .filter(|d| f.date_to.is_none_or(|x| d.pub_date <= x))
        .filter(|d| {
            f.title_keyword.as_ref().is_none_or(|k| d.title.to_lowercase().contains(&k.to_lowercase()))
        })
        .filter(|d| {
            f.topic_ids.as_ref().is_none_or(|sel| {
                state.atlas.doc_assignments.get(&d.doc_id).is_some_and(|leaf| lineage(leaf).iter().any(|t| sel.contains(t)))
            })
        })
        .collect();
    if let Some(q) = &f.query {
        match q.mode {
            QueryMode::Lexical => {
                let terms = tokens(&q.text);
                pass.retain(|d| tokens(&d.body).iter().any(|t| terms.contains(t)));
            }
            QueryMode::Semantic => {
                let qv = hash_embed(&q.text, DIM);
                let vecs: Vec<Vec<f64>> = pass.iter().map(|d| hash_embed(&d.embedding_text(), DIM)).collect();
                let top = vector_oracle(
                    pass.iter().zip(&vecs).map(|(d, v)| (d.doc_id.as_str(), 0, v.as_slice())),
                    &qv,
                    state.config.semantic_filter_k,
                );
                return top.into_iter().map(|(id, _, _)| id).collect();
            }
        }
    }
    pass.into_iter().map(|d| d.doc_id.clone()).collect()
}

fn document_qa() -> Outcome {
    let engine = shared_engine();
    let state = engine.state();
    let chunks = chunk_documents(state.catalog.docs());
    let sentence_vectors: Vec<Vec<f64>> = chunks.iter().map(|c| hash_embed(&c.text, DIM)).collect();
    let vocab = vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut answered, mut empty, mut cited) = (0, 0, 0);
    for i in 0..50 {
        let filter = random_filter(&mut rng, state, &vocab);
        let query = random_query(&mut rng, &vocab);
        let allowed = filter_oracle(state, &filter);
        let mask = engine.filter_mask(&filter).map_err(e)?;
        ensure!(state.catalog.ids(&mask) == allowed, "request {i}: filter set differs from oracle");

        let qv = hash_embed(&query, DIM);
        let want = vector_oracle(
            chunks
                .iter()
                .zip(&sentence_vectors)
                .filter(|(c, _)| allowed.contains(&c.doc_id))
                .map(|(c, v)| (c.doc_id.as_str(), c.seq, v.as_slice())),
            &qv,
            state.config.top_k_sentences,
        );
        let got = retrieve_sentences(&state.sentence_index, &state.sentence_texts, &qv, &mask, state.config.top_k_sentences);
        let req = QaRequest { mode: QaMode::Document, query: query.clone(), filter: Some(filter), topic_ids: None };
        if want.is_empty() {
            ensure!(matches!(got, Err(Error::EmptyContext)), "request {i}: expected empty context");
            ensure!(matches!(engine.answer(&req), Err(Error::EmptyContext)), "request {i}: answer should be empty");
            empty += 1;
            continue;
        }
        let got = got.map_err(e)?;
        let got_keys: Vec<(&str, u32)> = got.iter().map(|c| (c.source_id.as_str(), c.seq.unwrap())).collect();
        let want_keys: Vec<(&str, u32)> = want.iter().map(|(d, s, _)| (d.as_str(), *s)).collect();
        ensure!(got_keys == want_keys, "request {i}: {got_keys:?} != {want_keys:?}");

        let a = engine.answer(&req).map_err(e)?;
        let b = engine.answer(&req).map_err(e)?;
        ensure!(serde_json::to_vec(&a).unwrap() == serde_json::to_vec(&b).unwrap(), "request {i}: answers differ");
        ensure!(!a.citations.is_empty(), "request {i}: no citations");
        for c in &a.citations {
            ensure!(allowed.contains(c), "request {i}: citation {c} outside the filter");
        }
        cited += a.citations.len();
        answered += 1;
    }
    Ok(format!("{answered} answered ({cited} citations, all inside their filter), {empty} empty filters refused"))
}

fn corpus_routing() -> Outcome {
    let engine = shared_engine();
    let leaves: Vec<(String, String)> =
        engine.atlas().leaves().map(|t| (t.topic_id.clone(), t.label.clone())).collect();
    ensure!(leaves.len() >= 2, "only {} leaves", leaves.len());
    let templates = ["What is known about {}?", "Summarize {} please", "trends in {} over the quarter", "{}"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut routed = 0;
    let mut attempts = 0;
    while routed < 20 {
        attempts += 1;
        ensure!(attempts < 1000, "could not construct unambiguous queries");
        let (id, label) = leaves.choose(&mut rng).unwrap();
        let mut query = templates.choose(&mut rng).unwrap().replace("{}", label);
        if rng.gen_bool(0.5) {
            query = query.to_uppercase();
        }
        let lower = query.to_lowercase();
        let matching: Vec<&String> = leaves.iter().filter(|(_, l)| lower.contains(&l.to_lowercase())).map(|(i, _)| i).collect();
        if matching != vec![id] {
            continue;
        }
        let answer = engine
            .answer(&QaRequest { mode: QaMode::Corpus, query: query.clone(), filter: None, topic_ids: None })
            .map_err(e)?;
        ensure!(answer.citations == vec![id.clone()], "'{query}' routed to {:?}, expected {id}", answer.citations);
        routed += 1;
    }
    let all: Vec<String> = engine.atlas().topics.iter().map(|t| t.topic_id.clone()).collect();
    for _ in 0..20 {
        let n = rng.gen_range(1..=4.min(all.len()));
        let ids: Vec<String> = all.choose_multiple(&mut rng, n).cloned().collect();
        let answer = engine
            .answer(&QaRequest { mode: QaMode::Corpus, query: "overview".into(), filter: None, topic_ids: Some(ids.clone()) })
            .map_err(e)?;
        ensure!(answer.citations == ids, "explicit {ids:?} cited {:?}", answer.citations);
    }
    Ok(format!("20 label queries routed to their topic over {} leaves; 20 explicit selections cited exactly", leaves.len()))
}

fn enc(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn probe_uris(rng: &mut ChaCha8Rng, state: &EngineState, n: usize) -> Vec<String> {
    let vocab = vocabulary();
    (0..n)
        .map(|i| {
            let filter = enc(&serde_json::to_string(&random_filter(rng, state, &vocab)).unwrap());
            let q = enc(&random_query(rng, &vocab));
            match i % 4 {
                0 => format!("/search?q={q}&filter={filter}"),
                1 => format!("/search?q={q}&mode=semantic&k=20&filter={filter}"),
                2 => format!("/search?q={q}&field=title&offset=2"),
                _ => format!("/map?filter={filter}"),
            }
        })
        .collect()
}

fn determinism() -> Outcome {
    let cfg = EngineConfig { embedding_dim: DIM, ..Default::default() };
    let docs = generate_documents(&SynthConfig { docs: 500, days: 45, seed: 23, ..Default::default() });
    let stats = corpus_stats(&docs, cfg.interval_days, 0, 0).map_err(e)?;
    let tmp = tempfile::tempdir().map_err(e)?;
    let mut manifests = Vec::new();
    for run in 0..2 {
        let state = build_state(docs.clone(), stats.clone(), &cfg, &EmbeddingProvider::hash(DIM), &LlmProvider::Stub)
            .map_err(e)?;
        manifests.push((save_snapshot(&state, &tmp.path().join(format!("snap{run}"))).map_err(e)?, state));
    }
    let ((m0, built), (m1, _)) = (&manifests[0], &manifests[1]);
    ensure!(m0.files == m1.files, "file checksums differ between builds");
    ensure!(m0.snapshot_id == m1.snapshot_id, "snapshot ids differ");

    let (loaded, manifest) = load_snapshot(&tmp.path().join("snap0")).map_err(e)?;
    ensure!(&loaded == built, "loaded state differs from the built state");
    let mk = |state: EngineState| {
        let engine = Engine::new(state, EmbeddingProvider::hash(DIM), LlmProvider::Stub, manifest.snapshot_id.clone()).unwrap();
        router(AppState::ready(engine, GatewayConfig::default()))
    };
    let (before, after) = (mk(built.clone()), mk(loaded));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let uris = probe_uris(&mut rng, built, 20);
    let rt = tokio::runtime::Runtime::new().map_err(e)?;
    let fetch = |app: &axum::Router, uri: &str| {
        rt.block_on(async {
            let resp = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
            let status = resp.status().as_u16();
            (status, resp.into_body().collect().await.unwrap().to_bytes())
        })
    };
    let mut ok = 0;
    for uri in &uris {
        let a = fetch(&before, uri);
        let b = fetch(&after, uri);
        ensure!(a == b, "{uri}: responses differ");
        ok += usize::from(a.0 == 200);
    }
    Ok(format!("snapshot {} reproduced ({} files); 20 probes byte-identical ({ok} with status 200)", m0.snapshot_id, m0.files.len()))
}

fn scaled_latency() -> Outcome {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut index = VectorIndex::new(DIM);
    let mut vectors = Vec::with_capacity(n);
    for i in 0..n {
        let v = unit(&(0..DIM).map(|_| normal.sample(&mut rng)).collect::<Vec<_>>());
        index.insert(EntryKey { doc_id: format!("d{:05}", i / 10), seq: Some((i % 10) as u32) }, (i / 10) as u32, &v).map_err(e)?;
        vectors.push(v);
    }
    let mut times = Vec::new();
    for q in 0..51 {
        let query = unit(&(0..DIM).map(|_| normal.sample(&mut rng)).collect::<Vec<_>>());
        let t = Instant::now();
        let hits = index.search(&query, None, 10).map_err(e)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        if q == 0 {
            let want = vector_oracle(
                index.keys().iter().zip(&vectors).map(|(k, v)| (k.doc_id.as_str(), k.seq.unwrap(), v.as_slice())),
                &query,
                10,
            );
            let ok = hits.iter().zip(&want).all(|(h, w)| h.doc_id == w.0 && h.seq == Some(w.1));
            ensure!(ok && hits.len() == 10, "top-10 differs from brute force");
        }
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    let p95 = times[(times.len() * 95) / 100];
    ensure!(median < 200.0, "median {median:.1} ms");
    Ok(format!("100000 x d=64 exact top-10: median {median:.1} ms, p95 {p95:.1} ms over 51 queries"))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http(addr: &str, method: &str, path: &str, body: Option<&Value>) -> Result<(u16, Value), String> {
    let mut stream = TcpStream::connect(addr).map_err(e)?;
    stream.set_read_timeout(Some(Duration::from_secs(60))).map_err(e)?;
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
        payload.len()
    );
    stream.write_all(req.as_bytes()).map_err(e)?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).map_err(e)?;
    let text = String::from_utf8_lossy(&raw);
    let status: u16 = text.get(9..12).and_then(|s| s.parse().ok()).ok_or("malformed response")?;
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b).unwrap_or("");
    Ok((status, serde_json::from_str(body).unwrap_or(Value::Null)))
}

fn atlas_cli(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_atlas")).args(args).env("RUST_LOG", "warn").output().map_err(e)?;
    ensure!(out.status.success(), "atlas {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(serde_json::from_slice(&out.stdout).unwrap_or(Value::Null))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let corpus = tmp.path().join("corpus.jsonl");
    let wd = tmp.path().join("wd");
    let out = Command::new(env!("CARGO_BIN_EXE_atlas"))
        .args(["synth", s(&corpus), "--docs", "2000", "--days", "90"])
        .output()
        .map_err(e)?;
    ensure!(out.status.success(), "synth failed");

    let start = Instant::now();
    let stats = atlas_cli(&["ingest", s(&corpus), s(&wd)])?;
    ensure!(stats["doc_count"] == 2000, "ingested {}", stats["doc_count"]);
    atlas_cli(&["build", s(&wd)])?;
    let build_secs = start.elapsed().as_secs_f64();
    let port = std::net::TcpListener::bind("127.0.0.1:0").map_err(e)?.local_addr().map_err(e)?.port();
    let addr = format!("127.0.0.1:{port}");
    let _server = Server(
        Command::new(env!("CARGO_BIN_EXE_atlas"))
            .args(["serve", s(&wd), "--bind", &addr])
            .env("RUST_LOG", "warn")
            .env("ATLAS_RELOAD_SECS", "0")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(e)?,
    );
    let health = loop {
        ensure!(start.elapsed() < Duration::from_secs(300), "gateway not ready within 5 minutes");
        match http(&addr, "GET", "/health", None) {
            Ok((200, h)) => break h,
            _ => std::thread::sleep(Duration::from_millis(50)),
        }
    };
    let ready_secs = start.elapsed().as_secs_f64();
    ensure!(ready_secs < 300.0, "pipeline took {ready_secs:.0}s");
    ensure!(health["doc_count"] == 2000, "health doc_count {}", health["doc_count"]);
    ensure!(health["interval_count"] == 6, "health interval_count {}", health["interval_count"]);

    let (status, map) = http(&addr, "GET", "/map", None)?;
    ensure!(status == 200 && map["points"].as_array().map_or(0, Vec::len) == 2000, "/map status {status}");
    let topics = map["topics"].as_array().ok_or("map without topics")?;
    ensure!(!topics.is_empty(), "no topics on the map");
    let (status, tl) = http(&addr, "GET", "/timeline?bucket=week", None)?;
    ensure!(status == 200 && tl["total"] == 2000, "/timeline status {status}");
    for mode in ["lexical", "semantic"] {
        let (status, r) = http(&addr, "GET", &format!("/search?q={}&mode={mode}", enc("insulin glucose")), None)?;
        let hits = r["hits"].as_array().map_or(0, Vec::len);
        ensure!(status == 200 && hits == 10, "/search {mode}: status {status}, {hits} hits");
    }
    let (status, a) = http(&addr, "POST", "/qa", Some(&json!({"mode": "document", "query": "What do modulators do in cystic fibrosis?"})))?;
    ensure!(status == 200 && !a["citations"].as_array().is_none_or(Vec::is_empty), "/qa document status {status}");
    let (status, a) = http(&addr, "POST", "/qa", Some(&json!({"mode": "corpus", "query": "Which topics are covered?"})))?;
    ensure!(status == 200 && !a["citations"].as_array().is_none_or(Vec::is_empty), "/qa corpus status {status}");

    let topic_ids: Vec<String> = topics.iter().filter_map(|t| t["topic_id"].as_str().map(String::from)).collect();
    let vocab = vocabulary();
    let base = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = Vec::new();
    for _ in 0..10 {
        let mut f = Filter::default();
        let a = rng.gen_range(0..90);
        f.date_from = Some(base + chrono::Duration::days(a));
        f.date_to = Some(base + chrono::Duration::days(rng.gen_range(a..90)));
        if rng.gen_bool(0.5) {
            f.topic_ids = Some(topic_ids.choose_multiple(&mut rng, 2).cloned().collect());
        }
        if rng.gen_bool(0.3) {
            f.query = Some(FilterQuery { text: random_query(&mut rng, &vocab), mode: QueryMode::Lexical });
        }
        let param = enc(&serde_json::to_string(&f).unwrap());
        let bucket = ["day", "week", "month"].choose(&mut rng).unwrap();
        let (s1, tl) = http(&addr, "GET", &format!("/timeline?bucket={bucket}&filter={param}"), None)?;
        let (s2, map) = http(&addr, "GET", &format!("/map?filter={param}"), None)?;
        ensure!(s1 == 200 && s2 == 200, "filter request failed ({s1}, {s2})");
        let summed: u64 = tl["bins"].as_array().ok_or("no bins")?.iter().map(|b| b["count"].as_u64().unwrap_or(0)).sum();
        let points = map["points"].as_array().ok_or("no points")?.len() as u64;
        ensure!(summed == points && map["total"] == points, "timeline {summed} != map {points}");
        counts.push(points);
    }
    Ok(format!(
        "ingest+build {build_secs:.1}s, serving after {ready_secs:.1}s; all endpoints valid; timeline == map for 10 filters {counts:?}"
    ))
}
