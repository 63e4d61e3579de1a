//! Read-only HTTP recommendation service.
//!
//! A [`Snapshot`] holds a loaded model and its precomputed content
//! embeddings; each request costs one context-encoder pass plus a cosine
//! scan. The snapshot behind [`AppState`] can be replaced atomically while
//! requests are in flight.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::features::{ContextQuery, FeatureError};
use crate::model::{
    load_model, precompute_content_embeddings, ContentIndex, JcceModel, ModelError, Ranked, MODEL_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("no model loaded")]
    NoSnapshot,
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("cannot encode context: {0}")]
    Unencodable(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ServeError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServeError::NoSnapshot => StatusCode::SERVICE_UNAVAILABLE,
            ServeError::UnknownAttribute(_) | ServeError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServeError::Unencodable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServeError::Model(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServeError::NoSnapshot => "no_snapshot",
            ServeError::UnknownAttribute(_) => "unknown_attribute",
            ServeError::Unencodable(_) => "unencodable_context",
            ServeError::BadRequest(_) => "bad_request",
            ServeError::Model(_) => "internal",
        }
    }
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub content_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub ranked: Vec<RankedItem>,
    pub model_version: u32,
}

/// An immutable loaded model ready to answer queries.
#[derive(Debug)]
pub struct Snapshot {
    model: JcceModel,
    index: ContentIndex,
    content_ids: Vec<String>,
    loaded_at: DateTime<Utc>,
}

impl Snapshot {
    pub fn new(model: JcceModel) -> Result<Self, ServeError> {
        let index = precompute_content_embeddings(&model)?;
        let catalog = model.space.catalog();
        let content_ids = (0..catalog.len()).map(|k| catalog.genre(k).to_string()).collect();
        Ok(Snapshot {
            model,
            index,
            content_ids,
            loaded_at: Utc::now(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ServeError> {
        Self::new(load_model(path)?)
    }

    pub fn model(&self) -> &JcceModel {
        &self.model
    }

    pub fn catalog_size(&self) -> usize {
        self.content_ids.len()
    }

    pub fn loaded_at(&self) -> DateTime<Utc> {
        self.loaded_at
    }

    pub fn model_version(&self) -> u32 {
        MODEL_FORMAT_VERSION
    }

    /// The whole catalog ranked for `query`, by descending cosine score.
    pub fn rank(&self, query: &ContextQuery) -> Result<Vec<Ranked>, ServeError> {
        query.validate(self.model.space.schema()).map_err(|e| match e {
            FeatureError::UnknownAttribute(a) => ServeError::UnknownAttribute(a),
            other => ServeError::Unencodable(other.to_string()),
        })?;
        let unencodable = |e: ModelError| match e {
            ModelError::Feature(f) => ServeError::Unencodable(f.to_string()),
            ModelError::ZeroNorm(_) => ServeError::Unencodable("context embeds to the zero vector".into()),
            other => ServeError::Model(other),
        };
        let embedding = self.model.context_embedding(query).map_err(unencodable)?;
        self.index.rank(&embedding).map_err(unencodable)
    }

    pub fn content_id(&self, index: usize) -> Option<&str> {
        self.content_ids.get(index).map(String::as_str)
    }

    /// Top-`k` catalog genres for `query`; `k` is clamped to the catalog.
    pub fn recommend(&self, query: &ContextQuery, k: usize) -> Result<Recommendation, ServeError> {
        if k == 0 {
            return Err(ServeError::BadRequest("k must be at least 1".into()));
        }
        Ok(Recommendation {
            ranked: self
                .rank(query)?
                .into_iter()
                .take(k)
                .map(|r| RankedItem {
                    content_id: self.content_ids[r.content_id].clone(),
                    score: r.score,
                })
                .collect(),
            model_version: self.model_version(),
        })
    }
}

/// Shared server state: at most one snapshot, swapped atomically.
#[derive(Debug)]
pub struct AppState {
    slot: RwLock<Option<Arc<Snapshot>>>,
    default_k: usize,
}

impl AppState {
    pub fn new(default_k: usize) -> Self {
        AppState {
            slot: RwLock::new(None),
            default_k: default_k.max(1),
        }
    }

    pub fn with_snapshot(snapshot: Snapshot, default_k: usize) -> Self {
        let s = Self::new(default_k);
        s.swap(snapshot);
        s
    }

    /// Installs `snapshot`; requests already holding the old one finish
    /// against it.
    pub fn swap(&self, snapshot: Snapshot) -> Option<Arc<Snapshot>> {
        self.slot.write().expect("lock poisoned").replace(Arc::new(snapshot))
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.slot.read().expect("lock poisoned").clone()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendRequest {
    #[serde(default)]
    context: BTreeMap<String, Value>,
    k: Option<usize>,
}

fn to_query(context: BTreeMap<String, Value>) -> Result<ContextQuery, ServeError> {
    let mut q = ContextQuery::new();
    for (name, v) in context {
        let text = match v {
            Value::String(s) => s,
            Value::Bool(b) => (b as u8).to_string(),
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .into_iter()
                .map(|i| match i {
                    Value::String(s) => Ok(s),
                    other => Err(ServeError::BadRequest(format!("{name}: expected strings, got {other}"))),
                })
                .collect::<Result<Vec<_>, _>>()?
                .join("|"),
            other => return Err(ServeError::BadRequest(format!("{name}: unsupported value {other}"))),
        };
        q.0.insert(name, text);
    }
    Ok(q)
}

async fn recommend(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Recommendation>, ServeError> {
    let snapshot = state.current().ok_or(ServeError::NoSnapshot)?;
    let req: RecommendRequest =
        serde_json::from_slice(&body).map_err(|e| ServeError::BadRequest(e.to_string()))?;
    let query = to_query(req.context)?;
    Ok(Json(snapshot.recommend(&query, req.k.unwrap_or(state.default_k))?))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub model_version: u32,
    pub catalog_size: usize,
    pub loaded_at: DateTime<Utc>,
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Json<Health>, ServeError> {
    let s = state.current().ok_or(ServeError::NoSnapshot)?;
    Ok(Json(Health {
        status: "ok".into(),
        model_version: s.model_version(),
        catalog_size: s.catalog_size(),
        loaded_at: s.loaded_at(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/recommend", post(recommend))
        .route("/health", get(health))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn run(state: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
