//! JSON-over-HTTP front end for [`Portal`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::service::{Portal, PortalError};
use crate::bytes::Digest32;

pub const AUTHOR_HEADER: &str = "x-author-id";
pub const MAX_UPLOAD_BYTES: usize = 1 << 30;

pub struct ApiError(PortalError);

impl From<PortalError> for ApiError {
    fn from(e: PortalError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            PortalError::ArchiveMalformed(_)
            | PortalError::ManifestMissing
            | PortalError::ManifestInvalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PortalError::DuplicateSubmission { .. } | PortalError::WrongState(_) => StatusCode::CONFLICT,
            PortalError::UnknownSubmission(_) | PortalError::UnknownToken => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": self.0.kind(), "detail": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

fn bad_request(detail: &str) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({"error": "BadRequest", "detail": detail})),
    )
        .into_response()
}

async fn blocking<T, F>(portal: &Arc<Portal>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Portal) -> Result<T, PortalError> + Send + 'static,
{
    let portal = portal.clone();
    tokio::task::spawn_blocking(move || f(&portal))
        .await
        .map_err(|e| ApiError(PortalError::Io(std::io::Error::other(e))))?
        .map_err(ApiError)
}

fn parse_id(raw: &str) -> Option<Digest32> {
    raw.parse().ok()
}

async fn submit(State(portal): State<Arc<Portal>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(author) = headers
        .get(AUTHOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .filter(|a| !a.is_empty())
    else {
        return bad_request("missing x-author-id header");
    };
    match blocking(&portal, move |p| p.submit(&body, &author)).await {
        Ok(sub) => (
            StatusCode::CREATED,
            Json(json!({"submission_id": sub.submission_id, "state": sub.state})),
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

async fn process(State(portal): State<Arc<Portal>>, Path(id): Path<String>) -> Response {
    let Some(id) = parse_id(&id) else {
        return bad_request("submission id must be 64 lowercase hex characters");
    };
    match blocking(&portal, move |p| p.process(&id)).await {
        Ok(sub) => Json(sub).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn status(State(portal): State<Arc<Portal>>, Path(id): Path<String>) -> Response {
    let Some(id) = parse_id(&id) else {
        return bad_request("submission id must be 64 lowercase hex characters");
    };
    match portal.get(&id) {
        Some(sub) => Json(sub).into_response(),
        None => ApiError(PortalError::UnknownSubmission(id)).into_response(),
    }
}

async fn proof(State(portal): State<Arc<Portal>>, Path(token): Path<String>) -> Response {
    match blocking(&portal, move |p| p.bundle_bytes(&token)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRequest {
    token: String,
}

/// Body is either `{"token": "..."}` or a serialized bundle.
async fn verify(State(portal): State<Arc<Portal>>, body: Bytes) -> Response {
    if let Ok(req) = serde_json::from_slice::<TokenRequest>(&body) {
        return match blocking(&portal, move |p| p.public_verify(&req.token)).await {
            Ok(v) => Json(v).into_response(),
            Err(e) => e.into_response(),
        };
    }
    match blocking(&portal, move |p| p.verify_uploaded(&body)).await {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct AuditQuery {
    #[serde(default)]
    from_seq: u64,
}

async fn audit_log(State(portal): State<Arc<Portal>>, Query(q): Query<AuditQuery>) -> Response {
    match blocking(&portal, move |p| p.audit_entries(q.from_seq)).await {
        Ok(entries) => Json(entries).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(portal: Arc<Portal>) -> Router {
    Router::new()
        .route("/v1/submissions", post(submit))
        .route("/v1/submissions/{id}", get(status))
        .route("/v1/submissions/{id}/process", post(process))
        .route("/v1/proofs/{token}", get(proof))
        .route("/v1/verify", post(verify))
        .route("/v1/audit-log", get(audit_log))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(portal)
}

pub async fn serve(portal: Arc<Portal>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "portal listening");
    axum::serve(listener, router(portal)).await
}
