//! HTTP routes over the active engine snapshot.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderValue, Method};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

use atlas_core::engine::{MapView, SearchResult};
use atlas_core::index::{Bucket, Field, HistogramBin};
use atlas_core::qa::{Answer, QaRequest};
use atlas_core::{Engine, Filter, QueryMode};

use crate::config::GatewayConfig;
use crate::error::{ApiError, ErrorCode};

const DEFAULT_K: usize = 10;
const MAX_K: usize = 1000;

struct Shared {
    engine: RwLock<Option<Arc<Engine>>>,
    cfg: GatewayConfig,
    qa_permits: Semaphore,
}

/// Handle to the active snapshot. Swapping installs a new engine while
/// requests already holding the old one finish on it.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// State with no snapshot yet; every data route answers 503 until
    /// [`AppState::install`] is called.
    pub fn loading(cfg: GatewayConfig) -> Self {
        let permits = cfg.max_concurrent_qa;
        AppState { shared: Arc::new(Shared { engine: RwLock::new(None), cfg, qa_permits: Semaphore::new(permits) }) }
    }

    pub fn ready(engine: Engine, cfg: GatewayConfig) -> Self {
        let state = AppState::loading(cfg);
        state.install(engine);
        state
    }

    pub fn install(&self, engine: Engine) {
        let engine = Arc::new(engine);
        tracing::info!(snapshot_id = engine.snapshot_id(), docs = engine.catalog().len(), "snapshot active");
        *self.shared.engine.write().expect("engine lock poisoned") = Some(engine);
    }

    pub fn current(&self) -> Option<Arc<Engine>> {
        self.shared.engine.read().expect("engine lock poisoned").clone()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.shared.cfg
    }

    fn engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.current().ok_or_else(ApiError::loading)
    }

    fn expose(&self) -> bool {
        self.shared.cfg.expose_error_details
    }
}

/// Runs an engine call off the async workers; remote providers block.
async fn run<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> atlas_core::Result<T> + Send + 'static,
{
    let engine = state.engine()?;
    let expose = state.expose();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(ErrorCode::ProviderUnavailable, format!("worker failed: {e}")))?
        .map_err(|e| ApiError::from_engine(&e, expose))
}

type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

fn params(p: Params) -> Result<HashMap<String, String>, ApiError> {
    p.map(|Query(m)| m).map_err(|e| ApiError::bad_request(e.body_text()))
}

/// The `filter` parameter: a URL-encoded JSON object.
pub fn parse_filter(params: &HashMap<String, String>) -> Result<Filter, ApiError> {
    let Some(raw) = params.get("filter").filter(|s| !s.trim().is_empty()) else {
        return Ok(Filter::default());
    };
    let filter: Filter =
        serde_json::from_str(raw).map_err(|e| ApiError::bad_request(format!("malformed filter: {e}")))?;
    filter.validate().map_err(|e| ApiError::from_engine(&e, true))?;
    Ok(filter)
}

fn parse_num(params: &HashMap<String, String>, key: &str, default: usize) -> Result<usize, ApiError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| ApiError::bad_request(format!("{key} must be a non-negative integer"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub snapshot_id: String,
    pub doc_count: usize,
    pub sentence_count: usize,
    pub topic_count: usize,
    pub interval_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub mode: QueryMode,
    pub field: Field,
    pub k: usize,
    pub offset: usize,
    pub hits: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineResponse {
    pub bucket: Bucket,
    pub total: usize,
    pub bins: Vec<HistogramBin>,
}

async fn health(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let e = state.engine()?;
    Ok(Json(Health {
        status: "ok".into(),
        snapshot_id: e.snapshot_id().to_string(),
        doc_count: e.stats().doc_count,
        sentence_count: e.state().sentence_index.len(),
        topic_count: e.atlas().topics.len(),
        interval_count: e.stats().interval_count,
    }))
}

async fn map(State(state): State<AppState>, p: Params) -> Result<Json<MapView>, ApiError> {
    let p = params(p)?;
    let filter = parse_filter(&p)?;
    let cap = state.config().map_point_cap;
    run(&state, move |e| e.map(&filter, cap)).await.map(Json)
}

async fn search(State(state): State<AppState>, p: Params) -> Result<Json<SearchResponse>, ApiError> {
    let p = params(p)?;
    let query = p.get("q").map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
    let query = query.ok_or_else(|| ApiError::bad_request("q is required"))?;
    let mode = match p.get("mode").map(String::as_str).unwrap_or("lexical") {
        "lexical" => QueryMode::Lexical,
        "semantic" => QueryMode::Semantic,
        other => return Err(ApiError::bad_request(format!("unknown mode '{other}' (lexical|semantic)"))),
    };
    let field = match p.get("field").map(String::as_str).unwrap_or("body") {
        "body" => Field::Body,
        "title" => Field::Title,
        other => return Err(ApiError::bad_request(format!("unknown field '{other}' (body|title)"))),
    };
    if mode == QueryMode::Semantic && field != Field::Body {
        return Err(ApiError::bad_request("semantic search supports field=body only"));
    }
    let k = parse_num(&p, "k", DEFAULT_K)?;
    if k == 0 || k > MAX_K {
        return Err(ApiError::bad_request(format!("k must lie in 1..={MAX_K}")));
    }
    let offset = parse_num(&p, "offset", 0)?;
    let filter = parse_filter(&p)?;
    let q = query.clone();
    let hits = run(&state, move |e| e.search(&q, mode, field, &filter, k, offset)).await?;
    Ok(Json(SearchResponse { query, mode, field, k, offset, hits }))
}

async fn timeline(State(state): State<AppState>, p: Params) -> Result<Json<TimelineResponse>, ApiError> {
    let p = params(p)?;
    let bucket: Bucket = p
        .get("bucket")
        .map_or(Ok(Bucket::Day), |b| b.parse())
        .map_err(|e| ApiError::from_engine(&e, true))?;
    let filter = parse_filter(&p)?;
    let bins = run(&state, move |e| e.timeline(&filter, bucket)).await?;
    Ok(Json(TimelineResponse { bucket, total: bins.iter().map(|b| b.count).sum(), bins }))
}

async fn qa(State(state): State<AppState>, body: Result<Json<QaRequest>, JsonRejection>) -> Result<Json<Answer>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let _permit = state
        .shared
        .qa_permits
        .acquire()
        .await
        .map_err(|_| ApiError::new(ErrorCode::ProviderUnavailable, "service shutting down"))?;
    run(&state, move |e| e.answer(&req)).await.map(Json)
}

async fn not_found(req: Request) -> ApiError {
    ApiError::new(ErrorCode::NotFound, format!("no route for {} {}", req.method(), req.uri().path()))
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let route = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        target: "atlas::access",
        %method,
        route,
        status = resp.status().as_u16(),
        latency_ms = start.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    resp
}

fn cors(origin: &str) -> Option<CorsLayer> {
    let allow = if origin == "*" {
        AllowOrigin::any()
    } else {
        match HeaderValue::from_str(origin) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => {
                tracing::warn!(origin, "ignoring invalid CORS origin");
                return None;
            }
        }
    };
    Some(CorsLayer::new().allow_origin(allow).allow_methods([Method::GET, Method::POST]).allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: AppState) -> Router {
    let cors_layer = state.config().cors_origin.as_deref().and_then(cors);
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/map", get(map))
        .route("/search", get(search))
        .route("/timeline", get(timeline))
        .route("/qa", post(qa))
        .fallback(not_found)
        .with_state(state)
        .layer(middleware::from_fn(log_requests));
    if let Some(layer) = cors_layer {
        app = app.layer(layer);
    }
    app
}
