//! HTTP JSON API over a loaded index.
//!
//! ```text
//! GET  /health
//! POST /search          {"query": "..." | [f64...], "top_k": 10}
//! POST /steer           {"query": ..., "edits": {"12": 3.0}, "family_edits": {"4": 0.0}, "top_k": 10}
//! GET  /features/{id}
//! GET  /features?q=...&limit=20
//! GET  /families
//! GET  /families/{id}
//! ```
//!
//! Errors come back as `{"error": message, "code": kind}` with a matching
//! status. Displayed scores are rounded to four decimals.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use saerch_core::analysis::{build_cooccurrence, Family, FamilyMetrics};
use saerch_core::autointerp::activation_columns;
use saerch_core::linalg::cosine;
use saerch_core::search::{QueryFeature, SearchIndex, SteerEdits};
use saerch_core::SparseActivation;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embed::QueryEmbedder;
use crate::error::Error;

const TOP_DOCS: usize = 5;
const NEIGHBOURS: usize = 10;

pub struct ServiceState {
    pub index: SearchIndex,
    pub embedder: QueryEmbedder,
    /// Highest-activating rows per feature.
    top_docs: Vec<Vec<(usize, f64)>>,
    /// Strongest thresholded `C_norm` partners per feature.
    cooccurring: Vec<Vec<(usize, f64)>>,
}

impl ServiceState {
    /// `acts` are the corpus encodings under the index's model.
    pub fn new(index: SearchIndex, embedder: QueryEmbedder, acts: &[SparseActivation], tau: f64, epsilon: f64) -> Self {
        let n = index.model().n();
        let top_docs = activation_columns(acts, n)
            .into_iter()
            .map(|mut col| {
                col.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                col.truncate(TOP_DOCS);
                col
            })
            .collect();
        let graphs = build_cooccurrence(acts, n, epsilon, tau);
        let cooccurring = graphs
            .normalized
            .into_iter()
            .map(|mut row| {
                row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                row.truncate(NEIGHBOURS);
                row
            })
            .collect();
        Self { index, embedder, top_docs, cooccurring }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "code": self.code }))).into_response()
    }
}

impl From<saerch_core::Error> for ApiError {
    fn from(e: saerch_core::Error) -> Self {
        use saerch_core::Error as E;
        match e {
            E::UnknownFeature(_) => Self::new(StatusCode::NOT_FOUND, "unknown_feature", e.to_string()),
            E::UnknownFamily(_) => Self::new(StatusCode::NOT_FOUND, "unknown_family", e.to_string()),
            E::DimensionMismatch { .. } | E::Config(_) => Self::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(c) => c.into(),
            Error::EmbedUnavailable(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "embed_unavailable", e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn round4(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e4).round() / 1e4
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryInput {
    Text(String),
    /// An embedding already in normalized model space.
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SearchBody {
    pub query: QueryInput,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SteerBody {
    pub query: QueryInput,
    #[serde(default)]
    pub edits: BTreeMap<usize, f64>,
    #[serde(default)]
    pub family_edits: BTreeMap<usize, f64>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub doc_id: String,
    pub title: String,
    pub score: f64,
    pub year: Option<i32>,
    pub citation_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchView {
    pub results: Vec<HitView>,
    pub query_features: Vec<QueryFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
}

impl From<saerch_core::search::SearchResult> for SearchView {
    fn from(r: saerch_core::search::SearchResult) -> Self {
        Self {
            results: r
                .hits
                .into_iter()
                .map(|h| HitView {
                    doc_id: h.doc_id,
                    title: h.title,
                    score: round4(h.score),
                    year: h.year,
                    citation_count: h.citation_count,
                })
                .collect(),
            query_features: r
                .query_features
                .into_iter()
                .map(|f| QueryFeature { activation: round4(f.activation), ..f })
                .collect(),
            fidelity: r.fidelity.map(round4),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn resolve(state: &ServiceState, query: &QueryInput) -> Result<Vec<f64>, ApiError> {
    match query {
        QueryInput::Text(t) if t.trim().is_empty() => {
            Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "query is empty"))
        }
        QueryInput::Text(t) => Ok(state.embedder.embed_query(t)?),
        QueryInput::Vector(v) => Ok(v.clone()),
    }
}

async fn health(State(s): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "documents": s.index.len(),
        "features": s.index.model().n(),
        "families": s.index.forest().families.len(),
    }))
}

async fn search(State(s): State<Arc<ServiceState>>, Json(body): Json<SearchBody>) -> ApiResult<SearchView> {
    if body.top_k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "top_k must be at least 1"));
    }
    blocking(move || {
        let q = resolve(&s, &body.query)?;
        Ok(Json(s.index.search(&q, body.top_k)?.into()))
    })
    .await
}

async fn steer(State(s): State<Arc<ServiceState>>, Json(body): Json<SteerBody>) -> ApiResult<SearchView> {
    if body.top_k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "top_k must be at least 1"));
    }
    blocking(move || {
        let q = resolve(&s, &body.query)?;
        let edits = SteerEdits { edits: body.edits, family_edits: body.family_edits, top_k: body.top_k };
        let (result, _) = s.index.steer(&q, &edits)?;
        Ok(Json(result.into()))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocView {
    pub doc_id: String,
    pub title: String,
    pub activation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighbourView {
    pub id: usize,
    pub label: Option<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureView {
    pub id: usize,
    pub label: Option<String>,
    pub pearson: Option<f64>,
    pub f1: Option<f64>,
    pub density: f64,
    pub mean_nonzero_activation: f64,
    pub top_documents: Vec<DocView>,
    /// Features that fire alongside this one (thresholded `C_norm`).
    pub cooccurring: Vec<NeighbourView>,
    /// Nearest decoder directions.
    pub similar: Vec<NeighbourView>,
    pub families: Vec<usize>,
}

fn feature_view(s: &ServiceState, id: usize) -> Result<FeatureView, ApiError> {
    let catalog = s.index.catalog();
    let entry = catalog.get(id).ok_or(saerch_core::Error::UnknownFeature(id))?;
    let model = s.index.model();
    let neighbour = |(j, w): (usize, f64)| NeighbourView { id: j, label: catalog.label(j).map(String::from), weight: round4(w) };
    let mut similar: Vec<(usize, f64)> = (0..model.n())
        .filter(|&j| j != id)
        .map(|j| (j, cosine(model.decoder_column(id), model.decoder_column(j))))
        .collect();
    similar.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    similar.truncate(NEIGHBOURS);
    let docs = s.index.docs();
    Ok(FeatureView {
        id,
        label: entry.label.clone(),
        pearson: entry.pearson.map(round4),
        f1: entry.f1.map(round4),
        density: entry.density,
        mean_nonzero_activation: round4(entry.mean_nonzero_activation),
        top_documents: s.top_docs[id]
            .iter()
            .map(|&(r, v)| DocView { doc_id: docs[r].doc_id.clone(), title: docs[r].title.clone(), activation: round4(v) })
            .collect(),
        cooccurring: s.cooccurring[id].iter().copied().map(neighbour).collect(),
        similar: similar.into_iter().map(neighbour).collect(),
        families: s.index.forest().families.iter().filter(|f| f.members().contains(&id)).map(|f| f.id).collect(),
    })
}

async fn feature(State(s): State<Arc<ServiceState>>, Path(id): Path<usize>) -> ApiResult<FeatureView> {
    Ok(Json(feature_view(&s, id)?))
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeatureQuery {
    #[serde(default)]
    pub q: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    /// Rank by cosine between the embedded text and decoder directions.
    #[serde(default)]
    pub semantic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub id: usize,
    pub label: Option<String>,
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

async fn features(State(s): State<Arc<ServiceState>>, Query(q): Query<FeatureQuery>) -> ApiResult<Vec<FeatureSummary>> {
    let limit = q.limit.unwrap_or(20);
    blocking(move || {
        let catalog = s.index.catalog();
        let summary = |id: usize, score: Option<f64>| FeatureSummary {
            id,
            label: catalog.label(id).map(String::from),
            density: catalog.get(id).map_or(0.0, |f| f.density),
            score,
        };
        let text = q.q.unwrap_or_default();
        if q.semantic && !text.is_empty() {
            let v = s.embedder.embed_query(&text)?;
            let model = s.index.model();
            let mut ranked: Vec<(usize, f64)> = (0..model.n()).map(|i| (i, cosine(&v, model.decoder_column(i)))).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            return Ok(Json(ranked.into_iter().take(limit).map(|(i, c)| summary(i, Some(round4(c)))).collect()));
        }
        let needle = text.to_lowercase();
        let hits = catalog
            .features
            .iter()
            .filter(|f| needle.is_empty() || f.label.as_deref().is_some_and(|l| l.to_lowercase().contains(&needle)))
            .take(limit)
            .map(|f| summary(f.id, None))
            .collect();
        Ok(Json(hits))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyMember {
    pub id: usize,
    pub label: Option<String>,
    pub density: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyEdge {
    pub from: usize,
    pub to: usize,
    pub c_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyView {
    pub id: usize,
    pub parent: FamilyMember,
    pub children: Vec<FamilyMember>,
    pub iteration: usize,
    pub superfeature_label: Option<String>,
    pub metrics: Option<FamilyMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<FamilyEdge>,
}

fn family_view(s: &ServiceState, f: &Family, with_edges: bool) -> FamilyView {
    let catalog = s.index.catalog();
    let member = |id: usize| FamilyMember {
        id,
        label: catalog.label(id).map(String::from),
        density: catalog.get(id).map_or(0.0, |e| e.density),
    };
    FamilyView {
        id: f.id,
        parent: member(f.parent),
        children: f.children.iter().map(|&c| member(c)).collect(),
        iteration: f.iteration,
        superfeature_label: f.superfeature_label.clone(),
        metrics: f.metrics.clone(),
        edges: if with_edges {
            f.edges.iter().map(|&(from, to, w)| FamilyEdge { from, to, c_norm: round4(w) }).collect()
        } else {
            Vec::new()
        },
    }
}

async fn families(State(s): State<Arc<ServiceState>>) -> Json<Vec<FamilyView>> {
    Json(s.index.forest().families.iter().map(|f| family_view(&s, f, false)).collect())
}

async fn family(State(s): State<Arc<ServiceState>>, Path(id): Path<usize>) -> ApiResult<FamilyView> {
    let f = s.index.forest().get(id).ok_or(saerch_core::Error::UnknownFamily(id))?;
    Ok(Json(family_view(&s, f, true)))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .route("/steer", post(steer))
        .route("/features", get(features))
        .route("/features/{id}", get(feature))
        .route("/families", get(families))
        .route("/families/{id}", get(family))
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
