//! Workdir-based commands behind the CLI. A workdir holds the normalized
//! corpus, its stats, an optional `config.json`, and the built snapshot.

use std::fs;
use std::future::Future;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::Notify;

use atlas_core::embed::EmbeddingProvider;
use atlas_core::index::Field;
use atlas_core::ingest::{parse_corpus, CorpusStats};
use atlas_core::llm::LlmProvider;
use atlas_core::qa::{Answer, QaRequest};
use atlas_core::snapshot::{load_snapshot, read_manifest, save_snapshot, Manifest, MANIFEST_FILE};
use atlas_core::synth::{generate_documents, to_jsonl, SynthConfig};
use atlas_core::{build_state, Engine, EngineConfig, Error, Filter, QueryMode};

use crate::api::{router, AppState, SearchResponse};
use crate::config::{apply_engine_env, GatewayConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Engine(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("corpus_stats.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn gateway_config(&self) -> PathBuf {
        self.root.join("gateway.json")
    }

    pub fn snapshot(&self) -> PathBuf {
        self.root.join("snapshot")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".build.lock")
    }

    fn require(&self, path: PathBuf, hint: &str) -> CliResult<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Usage(format!("missing {} in {}; {hint}", file_name(&path), self.root.display())))
        }
    }

    fn require_snapshot(&self) -> CliResult<PathBuf> {
        let snap = self.snapshot();
        self.require(snap.join(MANIFEST_FILE), "run `atlas build` first")?;
        Ok(snap)
    }

    /// `explicit` if given, else the workdir's `config.json`, else defaults;
    /// then environment overrides.
    pub fn engine_config(&self, explicit: Option<&Path>) -> CliResult<EngineConfig> {
        let mut cfg = match explicit {
            Some(p) => EngineConfig::load(p)?,
            None if self.config().exists() => EngineConfig::load(&self.config())?,
            None => EngineConfig::default(),
        };
        apply_engine_env(&mut cfg, |k| std::env::var(k).ok())?;
        Ok(cfg)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Holds the workdir's build lock until dropped.
pub struct BuildLock {
    path: PathBuf,
}

impl BuildLock {
    pub fn acquire(wd: &Workdir) -> CliResult<Self> {
        let path = wd.lock();
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(BuildLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Engine(Error::InvalidArgument(format!(
                "another build holds {}; remove it if no build is running",
                path.display()
            )))),
            Err(e) => Err(Error::Io(e).into()),
        }
    }
}

impl Drop for BuildLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Validates a corpus file and stores its normalized form in the workdir.
pub fn ingest(corpus: &Path, wd: &Workdir, config: Option<&Path>) -> CliResult<CorpusStats> {
    if !corpus.exists() {
        return Err(CliError::Usage(format!("corpus file {} does not exist", corpus.display())));
    }
    fs::create_dir_all(wd.root()).map_err(Error::Io)?;
    let cfg = wd.engine_config(config)?;
    let parsed = parse_corpus(BufReader::new(fs::File::open(corpus).map_err(Error::Io)?), cfg.interval_days)?;
    fs::write(wd.corpus(), to_jsonl(&parsed.documents)).map_err(Error::Io)?;
    fs::write(wd.stats(), serde_json::to_vec_pretty(&parsed.stats).map_err(Error::Json)?).map_err(Error::Io)?;
    if let Some(p) = config {
        fs::copy(p, wd.config()).map_err(Error::Io)?;
    }
    tracing::info!(docs = parsed.stats.doc_count, skipped = parsed.stats.skipped, duplicates = parsed.stats.duplicates, "ingested");
    Ok(parsed.stats)
}

/// Runs the pipeline over the ingested corpus and writes the snapshot.
pub fn build(wd: &Workdir, config: Option<&Path>, seed: Option<u64>) -> CliResult<Manifest> {
    let corpus = wd.require(wd.corpus(), "run `atlas ingest` first")?;
    let mut cfg = wd.engine_config(config)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let _lock = BuildLock::acquire(wd)?;
    let parsed = parse_corpus(BufReader::new(fs::File::open(corpus).map_err(Error::Io)?), cfg.interval_days)?;
    // skip/duplicate counts come from the original ingest
    let mut stats = parsed.stats;
    if let Ok(text) = fs::read_to_string(wd.stats()) {
        if let Ok(original) = serde_json::from_str::<CorpusStats>(&text) {
            stats.skipped = original.skipped;
            stats.duplicates = original.duplicates;
        }
    }
    let embedder = EmbeddingProvider::from_config(&cfg)?;
    let llm = LlmProvider::from_config(&cfg)?;
    let state = build_state(parsed.documents, stats, &cfg, &embedder, &llm)?;
    let manifest = save_snapshot(&state, &wd.snapshot())?;
    tracing::info!(snapshot_id = %manifest.snapshot_id, "snapshot written");
    Ok(manifest)
}

/// Loads a snapshot with providers from its config and the gateway overrides.
pub fn load_engine(snapshot: &Path, gateway: &GatewayConfig) -> atlas_core::Result<Engine> {
    let (state, manifest) = load_snapshot(snapshot)?;
    let cfg = gateway.engine_config(&state.config);
    let embedder = EmbeddingProvider::from_config(&cfg)?;
    let llm = LlmProvider::from_config(&cfg)?;
    Engine::new(state, embedder, llm, manifest.snapshot_id)
}

pub fn open_engine(wd: &Workdir, gateway: &GatewayConfig) -> CliResult<Engine> {
    let snap = wd.require_snapshot()?;
    Ok(load_engine(&snap, gateway)?)
}

fn parse_filter(raw: Option<&str>) -> CliResult<Filter> {
    match raw {
        None => Ok(Filter::default()),
        Some(text) => {
            let f: Filter = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("malformed --filter: {e}")))?;
            f.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(f)
        }
    }
}

pub struct SearchArgs<'a> {
    pub query: &'a str,
    pub mode: QueryMode,
    pub field: Field,
    pub filter: Option<&'a str>,
    pub k: usize,
    pub offset: usize,
}

pub fn search(wd: &Workdir, gateway: &GatewayConfig, args: &SearchArgs<'_>) -> CliResult<SearchResponse> {
    let filter = parse_filter(args.filter)?;
    if args.query.trim().is_empty() {
        return Err(CliError::Usage("query must not be empty".into()));
    }
    if args.mode == QueryMode::Semantic && args.field != Field::Body {
        return Err(CliError::Usage("semantic search supports --field body only".into()));
    }
    let engine = open_engine(wd, gateway)?;
    let hits = engine.search(args.query, args.mode, args.field, &filter, args.k, args.offset)?;
    Ok(SearchResponse {
        query: args.query.to_string(),
        mode: args.mode,
        field: args.field,
        k: args.k,
        offset: args.offset,
        hits,
    })
}

pub fn qa(wd: &Workdir, gateway: &GatewayConfig, mut req: QaRequest, filter: Option<&str>) -> CliResult<Answer> {
    if req.query.trim().is_empty() {
        return Err(CliError::Usage("question must not be empty".into()));
    }
    if filter.is_some() {
        req.filter = Some(parse_filter(filter)?);
    }
    let engine = open_engine(wd, gateway)?;
    Ok(engine.answer(&req)?)
}

pub fn synth(out: &Path, cfg: &SynthConfig) -> CliResult<usize> {
    let docs = generate_documents(cfg);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::Io)?;
    }
    fs::write(out, to_jsonl(&docs)).map_err(Error::Io)?;
    Ok(docs.len())
}

/// Serves `snapshot` on `listener`. The listener answers 503 until the
/// snapshot has loaded; a snapshot that fails to load stops the server
/// with that error. With reloading enabled, a rebuilt snapshot is swapped
/// in once its manifest id changes.
pub async fn serve_on(
    listener: TcpListener,
    snapshot: PathBuf,
    gateway: GatewayConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> CliResult<()> {
    let state = AppState::loading(gateway.clone());
    let app = router(state.clone());
    let failure: Arc<Mutex<Option<Error>>> = Arc::new(Mutex::new(None));
    let failed = Arc::new(Notify::new());

    {
        let (state, snapshot, gateway, failure, failed) =
            (state.clone(), snapshot.clone(), gateway.clone(), failure.clone(), failed.clone());
        tokio::spawn(async move {
            let loaded = tokio::task::spawn_blocking(move || load_engine(&snapshot, &gateway)).await;
            match loaded {
                Ok(Ok(engine)) => state.install(engine),
                Ok(Err(e)) => {
                    tracing::error!(code = "snapshot_corrupt", error = %e, "snapshot failed to load");
                    *failure.lock().expect("failure lock") = Some(e);
                    failed.notify_one();
                }
                Err(e) => {
                    *failure.lock().expect("failure lock") = Some(Error::CorruptSnapshot(e.to_string()));
                    failed.notify_one();
                }
            }
        });
    }

    if gateway.reload_interval_secs > 0 {
        let (state, snapshot) = (state.clone(), snapshot.clone());
        let every = Duration::from_secs(gateway.reload_interval_secs);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tick.tick().await;
                let Some(current) = state.current() else { continue };
                let Ok(manifest) = read_manifest(&snapshot) else { continue };
                if manifest.snapshot_id == current.snapshot_id() {
                    continue;
                }
                let (snap, cfg) = (snapshot.clone(), state.config().clone());
                match tokio::task::spawn_blocking(move || load_engine(&snap, &cfg)).await {
                    Ok(Ok(engine)) => state.install(engine),
                    Ok(Err(e)) => tracing::warn!(error = %e, "rebuilt snapshot failed to load; keeping the active one"),
                    Err(e) => tracing::warn!(error = %e, "snapshot reload task failed"),
                }
            }
        });
    }

    let addr = listener.local_addr().map_err(Error::Io)?;
    tracing::info!(%addr, "listening");
    let stop = {
        let failed = failed.clone();
        async move {
            tokio::select! {
                _ = shutdown => {}
                _ = failed.notified() => {}
            }
        }
    };
    axum::serve(listener, app).with_graceful_shutdown(stop).await.map_err(Error::Io)?;
    let err = failure.lock().expect("failure lock").take();
    match err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub async fn serve(wd: &Workdir, gateway: GatewayConfig) -> CliResult<()> {
    let snapshot = wd.require_snapshot()?;
    let listener = TcpListener::bind(&gateway.bind)
        .await
        .map_err(|e| CliError::Usage(format!("cannot bind {}: {e}", gateway.bind)))?;
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
    };
    serve_on(listener, snapshot, gateway, shutdown).await
}
