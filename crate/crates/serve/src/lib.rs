//! HTTP front end for preference-controlled re-ranking.
//!
//! The loaded bundle sits in a single slot holding an `Arc`. Each request
//! clones the `Arc` once and works on that snapshot only, so a reload never
//! mixes two bundles within one request.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use steerank_core::actor::{FixedInsertion, Mode};
use steerank_core::bundle::{self, Bundle};
use steerank_core::data::{Item, UserProfile};
use steerank_core::instance::Instance;
use steerank_core::Error;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RerankRequest {
    pub user: UserProfile,
    pub candidates: Vec<Item>,
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub constraints: Vec<FixedInsertion>,
    #[serde(default = "greedy")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn greedy() -> Mode {
    Mode::Greedy
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct RerankResponse {
    pub items: Vec<u64>,
    pub probs: Vec<f64>,
    pub utilities: BTreeMap<String, f64>,
    pub bundle: String,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct Meta {
    /// In configuration order, the same order as sweep CSV columns.
    pub utilities: Vec<String>,
    pub caps: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub bundle: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Infeasible(_) => StatusCode::CONFLICT,
            Error::Invalid(_) | Error::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// Shared service state: the current bundle and where to reload it from.
#[derive(Default)]
pub struct AppState {
    slot: RwLock<Option<Arc<Bundle>>>,
    path: RwLock<Option<PathBuf>>,
}

impl AppState {
    pub fn empty() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn with_bundle(b: Bundle) -> Arc<Self> {
        let s = Self::default();
        s.swap(b);
        Arc::new(s)
    }

    pub fn from_path(path: &Path) -> steerank_core::Result<Arc<Self>> {
        let s = Self::with_bundle(bundle::load(path)?);
        *s.path.write().unwrap() = Some(path.to_path_buf());
        Ok(s)
    }

    pub fn current(&self) -> Option<Arc<Bundle>> {
        self.slot.read().unwrap().clone()
    }

    /// Installs `b`; requests already holding the old snapshot finish on it.
    pub fn swap(&self, b: Bundle) -> Option<Arc<Bundle>> {
        self.slot.write().unwrap().replace(Arc::new(b))
    }

    fn require(&self) -> Result<Arc<Bundle>, ApiError> {
        self.current()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model bundle loaded"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/meta", get(meta))
        .route("/rerank", post(rerank))
        .route("/reload", post(reload))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub fn meta_of(b: &Bundle) -> Meta {
    Meta {
        utilities: b.model.config.utility_names(),
        caps: b.model.caps(),
        n: b.header.n,
        m: b.header.m,
        bundle: b.hash.clone(),
    }
}

async fn meta(State(state): State<Arc<AppState>>) -> Result<Json<Meta>, ApiError> {
    let b = state.require()?;
    Ok(Json(meta_of(&b)))
}

/// Orders the named weights as the model's utilities and checks them.
pub fn weight_vector(b: &Bundle, weights: &BTreeMap<String, f64>) -> Result<Vec<f64>, ApiError> {
    let names = b.model.config.utility_names();
    let caps = b.model.caps();
    if let Some(unknown) = weights.keys().find(|k| !names.contains(k)) {
        return Err(ApiError::bad_request(format!("unknown utility `{unknown}`")));
    }
    let mut w = Vec::with_capacity(names.len());
    for (name, cap) in names.iter().zip(caps) {
        let v = *weights
            .get(name)
            .ok_or_else(|| ApiError::bad_request(format!("missing weight for `{name}`")))?;
        if !v.is_finite() || v < 0.0 || v > cap {
            return Err(ApiError::bad_request(format!("weight for `{name}` is {v}, allowed range is [0, {cap}]")));
        }
        w.push(v);
    }
    Ok(w)
}

/// The full re-ranking path on one snapshot.
pub fn handle_rerank(b: &Bundle, req: &RerankRequest) -> Result<RerankResponse, ApiError> {
    let start = Instant::now();
    let w = weight_vector(b, &req.weights)?;
    let n = b.model.actor.n;
    if req.candidates.len() < n {
        return Err(ApiError::bad_request(format!("{} candidates, at least {n} required", req.candidates.len())));
    }
    let inst = Instance::new(req.user.clone(), req.candidates.clone())?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let list = b.model.rerank(&inst, &w, &req.constraints, req.mode, &mut rng)?;
    let u = b.model.utility_vector(&[(&inst, list.indices.as_slice())])?;
    let utilities = b.model.config.utility_names().into_iter().zip(u).collect();
    Ok(RerankResponse {
        items: list.indices.iter().map(|&i| inst.candidates[i].id).collect(),
        probs: list.probs,
        utilities,
        bundle: b.hash.clone(),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn rerank(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RerankRequest>, JsonRejection>,
) -> Result<Json<RerankResponse>, ApiError> {
    let snapshot = state.require()?;
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let out = tokio::task::spawn_blocking(move || handle_rerank(&snapshot, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReloadRequest {
    path: Option<PathBuf>,
}

/// An empty body reloads from the remembered path.
async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Meta>, ApiError> {
    let req: ReloadRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReloadRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("reload body: {e}")))?
    };
    let path = match req.path {
        Some(p) => p,
        None => state
            .path
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::bad_request("no bundle path to reload from"))?,
    };
    let p = path.clone();
    let b = tokio::task::spawn_blocking(move || bundle::load(&p))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let m = meta_of(&b);
    state.swap(b);
    *state.path.write().unwrap() = Some(path);
    tracing::info!(bundle = %m.bundle, "bundle reloaded");
    Ok(Json(m))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
