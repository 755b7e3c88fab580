//! Read-only HTTP service over one attention dump.
//!
//! Routes:
//! - `GET /api/meta`: the dump header as stored
//! - `GET /api/frame`: one rendered output frame as PNG
//! - `GET /api/grid`: a grid of per-index renders as PNG
//! - `GET /api/stats`: a focus-statistic series as JSON or CSV
//!
//! Every successful response carries a strong ETag derived from the dump
//! digest and the parsed request, so identical requests get identical bytes
//! and `If-None-Match` revalidation answers 304.

mod cache;
mod error;
mod params;

use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::Arc;

use attnscope_core::render::{render_grid, GridRequest, PreparedSequence, RenderSpec, RgbImage};
use attnscope_core::{stats_series, AttentionStore, AxisSel, Selection};
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use lru::LruCache;
use parking_lot::Mutex;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub use cache::RenderCache;
pub use error::ApiError;

pub const DEFAULT_CACHE_MB: usize = 512;
const PREPARED_ENTRIES: usize = 64;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub cache_bytes: usize,
    /// Directory served for paths outside `/api` (the explorer build).
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origin; `None` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            cache_bytes: DEFAULT_CACHE_MB << 20,
            static_dir: None,
            cors_origin: None,
        }
    }
}

/// An open dump plus everything derived from it.
pub struct Session {
    store: AttentionStore,
    digest: String,
    base_frames: Option<Vec<RgbImage>>,
    cache: RenderCache,
    prepared: Mutex<LruCache<String, Arc<PreparedSequence>>>,
}

impl Session {
    pub fn new(store: AttentionStore, cache_bytes: usize) -> Self {
        let digest = dump_digest(&store);
        Session {
            store,
            digest,
            base_frames: None,
            cache: RenderCache::new(cache_bytes),
            prepared: Mutex::new(LruCache::new(NonZeroUsize::new(PREPARED_ENTRIES).unwrap())),
        }
    }

    /// Video frames that `/api/frame?alpha=` blends heatmaps over.
    pub fn with_base_frames(mut self, frames: Vec<RgbImage>) -> Result<Self, ApiError> {
        let o = self.store.header().output_shape;
        if frames.len() != o.frames || frames.iter().any(|f| (f.width, f.height) != (o.width, o.height)) {
            return Err(ApiError::bad_request(format!(
                "base frames must be {} images of {}x{}",
                o.frames, o.width, o.height
            )));
        }
        self.base_frames = Some(frames);
        Ok(self)
    }

    pub fn store(&self) -> &AttentionStore {
        &self.store
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn cache(&self) -> &RenderCache {
        &self.cache
    }

    fn etag(&self, key: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.digest.as_bytes());
        h.update([0]);
        h.update(key.as_bytes());
        format!("\"{}\"", &hex::encode(h.finalize())[..32])
    }

    fn prepared(&self, sel: &Selection, spec: &RenderSpec) -> Result<Arc<PreparedSequence>, ApiError> {
        let key = format!(
            "{sel}|{}|{}|{}|{:?}",
            spec.norm, spec.cmap.name, spec.alpha, spec.mapping
        );
        if let Some(p) = self.prepared.lock().get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(PreparedSequence::new(&self.store, sel, spec)?);
        self.prepared.lock().put(key, p.clone());
        Ok(p)
    }
}

/// SHA-256 over the header bytes and the chunk checksum table.
pub fn dump_digest(store: &AttentionStore) -> String {
    let mut h = Sha256::new();
    h.update(store.header_json());
    for c in store.checksums() {
        h.update(c.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Default)]
pub struct AppState {
    pub session: Option<Arc<Session>>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        AppState {
            session: Some(Arc::new(session)),
        }
    }

    pub fn empty() -> Self {
        AppState::default()
    }

    fn session(&self) -> Result<Arc<Session>, ApiError> {
        self.session
            .clone()
            .ok_or_else(|| ApiError::unavailable("no attention dump loaded"))
    }
}

pub fn router(state: AppState, config: &ServiceConfig) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([axum::http::Method::GET])
        .allow_headers([header::IF_NONE_MATCH])
        .expose_headers([header::ETAG]);
    let cors = match &config.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => cors.allow_origin(AllowOrigin::exact(v)),
            Err(_) => cors.allow_origin(Any),
        },
        None => cors.allow_origin(Any),
    };
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/frame", get(frame))
        .route("/api/grid", get(grid))
        .route("/api/stats", get(stats))
        .with_state(state);
    let app = match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such route") }),
    };
    app.layer(cors)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type Q = Result<Query<params::Query>, QueryRejection>;

fn query(q: Q) -> Result<params::Query, ApiError> {
    q.map(|Query(q)| q).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn not_modified(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"))
}

fn respond(etag: &str, content_type: &'static str, body: Bytes) -> Response {
    (
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(content_type)),
            (header::ETAG, HeaderValue::from_str(etag).unwrap()),
            (header::CACHE_CONTROL, HeaderValue::from_static("no-cache")),
        ],
        body,
    )
        .into_response()
}

/// Serves `key` from the cache, or computes it on the blocking pool.
async fn cached<F>(
    session: Arc<Session>,
    headers: &HeaderMap,
    key: String,
    content_type: &'static str,
    compute: F,
) -> Result<Response, ApiError>
where
    F: FnOnce(&Session) -> Result<Vec<u8>, ApiError> + Send + 'static,
{
    let etag = session.etag(&key);
    if not_modified(headers, &etag) {
        return Ok((
            StatusCode::NOT_MODIFIED,
            [(header::ETAG, HeaderValue::from_str(&etag).unwrap())],
        )
            .into_response());
    }
    if let Some(body) = session.cache.get(&key) {
        return Ok(respond(&etag, content_type, body));
    }
    let s = session.clone();
    let body = tokio::task::spawn_blocking(move || compute(&s))
        .await
        .map_err(|e| ApiError::internal(format!("render task failed: {e}")))??;
    let body = Bytes::from(body);
    session.cache.insert(key, body.clone());
    Ok(respond(&etag, content_type, body))
}

async fn meta(State(state): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let s = state.session()?;
    let etag = s.etag("meta");
    if not_modified(&headers, &etag) {
        return Ok((
            StatusCode::NOT_MODIFIED,
            [(header::ETAG, HeaderValue::from_str(&etag).unwrap())],
        )
            .into_response());
    }
    Ok(respond(
        &etag,
        "application/json",
        Bytes::copy_from_slice(s.store.header_json()),
    ))
}

fn reject_all(sel: &Selection) -> Result<(), ApiError> {
    if [sel.steps, sel.blocks, sel.heads].contains(&AxisSel::All) {
        return Err(ApiError::bad_request(
            "\"all\" is not valid here; use /api/grid to lay out an axis",
        ));
    }
    Ok(())
}

async fn frame(State(state): State<AppState>, headers: HeaderMap, q: Q) -> Result<Response, ApiError> {
    let s = state.session()?;
    let q = query(q)?;
    let store = &s.store;
    let token = params::token(&q, store)?;
    let sel = params::selection(&q, store, token)?;
    reject_all(&sel)?;
    let frames = store.header().output_shape.frames;
    let f = params::frame(&q, frames)?;
    let norm = params::norm(&q)?;
    let cmap = params::cmap(&q)?;
    let mapping = params::mapping(&q)?;
    let alpha = params::alpha(&q)?;
    if alpha.is_some() && s.base_frames.is_none() {
        return Err(ApiError::bad_request(
            "alpha needs base video frames, and none were loaded",
        ));
    }
    sel.check(store)?;
    if f >= frames {
        return Err(attnscope_core::Error::Bounds {
            axis: "frame",
            index: f,
            len: frames,
        }
        .into());
    }
    let spec = RenderSpec {
        norm,
        cmap,
        alpha: alpha.unwrap_or(attnscope_core::render::DEFAULT_ALPHA),
        output: None,
        mapping,
    };
    let key = format!(
        "frame|{sel}|frame={f}|norm={norm}|cmap={}|alpha={alpha:?}|mapping={mapping:?}",
        spec.cmap.name
    );
    cached(s, &headers, key, "image/png", move |s| {
        let prep = s.prepared(&sel, &spec)?;
        let base = match alpha {
            Some(_) => s.base_frames.as_ref().map(|b| &b[f]),
            None => None,
        };
        Ok(prep.render_frame(f, base)?.to_png()?)
    })
    .await
}

async fn grid(State(state): State<AppState>, headers: HeaderMap, q: Q) -> Result<Response, ApiError> {
    let s = state.session()?;
    let q = query(q)?;
    let store = &s.store;
    let token = params::token(&q, store)?;
    let axis =
        params::axis(&q, "axis")?.ok_or_else(|| ApiError::bad_request("missing axis (steps, blocks or heads)"))?;
    let fixed = params::selection(&q, store, token)?;
    let mut req = GridRequest::new(token, axis, fixed);
    req.rows_axis = params::axis(&q, "rows_axis")?;
    req.frame = params::frame(&q, store.header().output_shape.frames)?;
    req.cols = params::usize_opt(&q, "cols")?;
    if req.cols == Some(0) {
        return Err(ApiError::bad_request("cols must be positive"));
    }
    req.cell = match (params::usize_opt(&q, "cell_w")?, params::usize_opt(&q, "cell_h")?) {
        (None, None) => None,
        (Some(w), Some(h)) if w > 0 && h > 0 => Some((w, h)),
        _ => {
            return Err(ApiError::bad_request(
                "cell_w and cell_h must be given together and be positive",
            ))
        }
    };
    if let Some(p) = params::usize_opt(&q, "padding")? {
        req.padding = p;
    }
    if let Some(shared) = params::bool_opt(&q, "shared")? {
        req.shared_norm = shared;
    }
    req.norm = params::norm(&q)?;
    req.cmap = params::cmap(&q)?;
    req.mapping = params::mapping(&q)?;
    // Bounds and "all" errors surface before any work is scheduled.
    req.cell_selections(store)?;

    let key = format!(
        "grid|{}|axis={axis}|rows={:?}|frame={}|cols={:?}|cell={:?}|pad={}|shared={}|norm={}|cmap={}|mapping={:?}",
        req.fixed,
        req.rows_axis,
        req.frame,
        req.cols,
        req.cell,
        req.padding,
        req.shared_norm,
        req.norm,
        req.cmap.name,
        req.mapping
    );
    cached(s, &headers, key, "image/png", move |s| {
        Ok(render_grid(&s.store, &req)?.to_png()?)
    })
    .await
}

async fn stats(State(state): State<AppState>, headers: HeaderMap, q: Q) -> Result<Response, ApiError> {
    let s = state.session()?;
    let q = query(q)?;
    let store = &s.store;
    let token = params::token(&q, store)?;
    let metric = params::metric(&q)?;
    let axis = params::axis(&q, "axis")?.unwrap_or(attnscope_core::Axis::Steps);
    let fixed = params::selection(&q, store, token)?.with(axis, AxisSel::Mean);
    reject_all(&fixed)?;
    fixed.check(store)?;
    let csv = match params::str_opt(&q, "format") {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "format: expected json or csv; got {other:?}"
            )))
        }
    };
    let key = format!("stats|{fixed}|metric={metric}|axis={axis}|csv={csv}");
    let content_type = if csv { "text/csv" } else { "application/json" };
    cached(s, &headers, key, content_type, move |s| {
        let series = stats_series(&s.store, token, metric, axis, fixed)?;
        Ok(if csv { series.to_csv() } else { series.to_json() }.into_bytes())
    })
    .await
}
