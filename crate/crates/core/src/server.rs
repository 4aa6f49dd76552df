//! HTTP+JSON front of the annotation store.
//!
//! Routes: `GET /relations`, `GET /queue/{relation}?top_k=&annotator=`,
//! `POST /verdict`, `GET /progress/{relation}`,
//! `GET /agreement/{relation}?a=&b=`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::annotation::{now_secs, AnnotationError, AnnotationEvent, AnnotationStore, QueueRow};
use crate::confidence::Verdict;

pub type SharedStore = Arc<RwLock<AnnotationStore>>;

struct ApiError(StatusCode, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let code = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RelationSummary {
    pub relation: String,
    pub queue_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueResponse {
    pub relation: String,
    pub annotator_id: String,
    pub patterns: Vec<QueueRow>,
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    top_k: Option<usize>,
    annotator: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub relation: String,
    pub sdp: String,
    pub verdict: String,
    pub annotator_id: String,
    #[serde(default)]
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub relation: String,
    pub sdp: String,
    pub annotator_id: String,
    pub verdict: Verdict,
    pub journal_events: usize,
}

#[derive(Debug, Deserialize)]
struct AgreementParams {
    a: String,
    b: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AgreementResponse {
    pub relation: String,
    pub a: String,
    pub b: String,
    pub kappa: f64,
    pub patterns: usize,
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/relations", get(relations))
        .route("/queue/{relation}", get(queue))
        .route("/verdict", post(verdict))
        .route("/progress/{relation}", get(progress))
        .route("/agreement/{relation}", get(agreement))
        .with_state(store)
}

async fn relations(State(store): State<SharedStore>) -> Json<Vec<RelationSummary>> {
    let store = store.read().await;
    Json(
        store
            .relations()
            .map(|(r, n)| RelationSummary {
                relation: r.clone(),
                queue_size: n,
            })
            .collect(),
    )
}

async fn queue(
    State(store): State<SharedStore>,
    Path(relation): Path<String>,
    Query(params): Query<QueueParams>,
) -> Result<Json<QueueResponse>, ApiError> {
    let store = store.read().await;
    let annotator = params
        .annotator
        .unwrap_or_else(|| store.primary_annotator().to_string());
    let patterns = store.queue_view(&relation, params.top_k, Some(&annotator))?;
    Ok(Json(QueueResponse {
        relation,
        annotator_id: annotator,
        patterns,
    }))
}

fn parse_verdict(s: &str) -> Result<Verdict, ApiError> {
    match s.to_ascii_uppercase().as_str() {
        "ACCEPTED" => Ok(Verdict::Accepted),
        "REJECTED" => Ok(Verdict::Rejected),
        other => Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("verdict must be ACCEPTED or REJECTED, got `{other}`"),
        )),
    }
}

async fn verdict(
    State(store): State<SharedStore>,
    body: Result<Json<VerdictRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<VerdictResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let verdict = parse_verdict(&req.verdict)?;
    let mut store = store.write().await;
    let applied = store.record(AnnotationEvent {
        relation: req.relation.clone(),
        sdp: req.sdp.clone(),
        verdict,
        annotator_id: req.annotator_id.clone(),
        timestamp: now_secs(),
        session_id: req.session_id,
    })?;
    Ok(Json(VerdictResponse {
        relation: req.relation,
        sdp: req.sdp,
        annotator_id: req.annotator_id,
        verdict: applied,
        journal_events: store.events().len(),
    }))
}

async fn progress(
    State(store): State<SharedStore>,
    Path(relation): Path<String>,
) -> Result<Json<crate::annotation::Progress>, ApiError> {
    let store = store.read().await;
    Ok(Json(store.progress(&relation, now_secs())?))
}

async fn agreement(
    State(store): State<SharedStore>,
    Path(relation): Path<String>,
    Query(params): Query<AgreementParams>,
) -> Result<Json<AgreementResponse>, ApiError> {
    let store = store.read().await;
    let (kappa, patterns) = store.agreement(&relation, &params.a, &params.b)?;
    Ok(Json(AgreementResponse {
        relation,
        a: params.a,
        b: params.b,
        kappa,
        patterns,
    }))
}

/// Serves until ctrl-c.
pub async fn serve(store: AnnotationStore, addr: SocketAddr) -> std::io::Result<()> {
    let app = router(Arc::new(RwLock::new(store)));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
