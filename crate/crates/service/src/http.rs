//! HTTP+JSON API over a [`Platform`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use loadsafe_core::dataset::ClassLabel;
use serde::Deserialize;
use serde_json::json;

use crate::error::ServiceError;
use crate::platform::Platform;
use crate::store::IMAGE_DIR;
use crate::types::Status;

pub const OPERATOR_HEADER: &str = "x-operator-id";
const MAX_UPLOAD_BYTES: usize = 64 << 20;
pub const EXPORT_DIR: &str = "exports";

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadImage(_) | ServiceError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotClaimed(_) | ServiceError::ClaimedByOther { .. } | ServiceError::LeaseExpired(_) => {
                StatusCode::FORBIDDEN
            }
            ServiceError::NotQueued(_) | ServiceError::Conflict { .. } | ServiceError::NothingDecided => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.code(), "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::InvalidArgument(msg.into()))
}

pub fn router(platform: Arc<Platform>) -> Router {
    Router::new()
        .route("/submissions", post(submit))
        .route("/submissions/{id}", get(get_submission))
        .route("/submissions/{id}/image", get(image))
        .route("/submissions/{id}/decision", post(decision))
        .route("/queue", get(queue))
        .route("/queue/claim", post(claim))
        .route("/metrics", get(metrics))
        .route("/export", post(export))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(platform)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::InvalidArgument(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

/// Accepts `multipart/form-data` with an `image` part (and an optional
/// `metadata` JSON part) or the raw image as the request body.
async fn submit(State(p): State<Arc<Platform>>, req: Request) -> ApiResult<impl IntoResponse> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (image, metadata) = if is_multipart {
        let mut mp = Multipart::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?;
        let (mut image, mut metadata) = (None, None);
        while let Some(field) = mp.next_field().await.map_err(|e| bad(e.body_text()))? {
            match field.name() {
                Some("image") => image = Some(field.bytes().await.map_err(|e| bad(e.body_text()))?),
                Some("metadata") => {
                    let text = field.text().await.map_err(|e| bad(e.body_text()))?;
                    metadata = Some(serde_json::from_str(&text).map_err(|e| bad(format!("metadata: {e}")))?);
                }
                _ => {}
            }
        }
        (image.ok_or_else(|| bad("multipart body has no `image` part"))?, metadata)
    } else {
        (Bytes::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?, None)
    };
    let sub = blocking(move || p.submit_photo(&image, metadata)).await?;
    Ok((StatusCode::CREATED, Json(sub)))
}

async fn get_submission(State(p): State<Arc<Platform>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(p.store().get(&id)?))
}

async fn image(State(p): State<Arc<Platform>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let path = p.store().image_path(&id)?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| ApiError(ServiceError::io(path, e)))?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-pixmap")], bytes))
}

#[derive(Deserialize)]
struct QueueParams {
    status: Option<String>,
    limit: Option<usize>,
}

/// `status` defaults to PENDING_REVIEW; `ALL` lists every submission.
async fn queue(State(p): State<Arc<Platform>>, Query(q): Query<QueueParams>) -> ApiResult<impl IntoResponse> {
    let status = match q.status.as_deref().map(str::trim) {
        None | Some("") => Some(Status::PendingReview),
        Some(s) if s.eq_ignore_ascii_case("all") => None,
        Some(s) => Some(Status::parse(s).ok_or_else(|| bad(format!("unknown status `{s}`")))?),
    };
    Ok(Json(p.list_queue(status, q.limit)))
}

#[derive(Deserialize, Default)]
struct OperatorBody {
    operator_id: Option<String>,
}

fn operator_from(headers: &HeaderMap, body_value: Option<String>) -> ApiResult<String> {
    headers
        .get(OPERATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(body_value)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| bad(format!("operator id missing: send the `{OPERATOR_HEADER}` header or `operator_id`")))
}

fn json_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| bad(format!("request body: {e}")))
}

/// Returns the leased submission, or 204 when nothing is claimable.
async fn claim(State(p): State<Arc<Platform>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let b: OperatorBody = json_body(&body)?;
    let operator = operator_from(&headers, b.operator_id)?;
    Ok(match blocking(move || p.claim_next(&operator)).await? {
        Some(s) => Json(s).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize, Default)]
struct DecisionBody {
    operator_id: Option<String>,
    #[serde(alias = "label")]
    final_label: Option<ClassLabel>,
}

async fn decision(
    State(p): State<Arc<Platform>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let b: DecisionBody = json_body(&body)?;
    let operator = operator_from(&headers, b.operator_id)?;
    let label = b.final_label.ok_or_else(|| bad("`final_label` is required"))?;
    Ok(Json(blocking(move || p.post_decision(&id, &operator, label)).await?))
}

async fn metrics(State(p): State<Arc<Platform>>) -> impl IntoResponse {
    Json(p.metrics())
}

#[derive(Deserialize, Default)]
struct ExportBody {
    name: Option<String>,
}

/// Exports into `<data dir>/exports/<name>/` (default name `latest`).
async fn export(State(p): State<Arc<Platform>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: ExportBody = json_body(&body)?;
    let name = b.name.unwrap_or_else(|| "latest".into());
    if name.is_empty() || name == IMAGE_DIR || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(bad(format!("export name `{name}` must be non-empty and use only letters, digits, `-` and `_`")));
    }
    let dest = p.store().data_dir().join(EXPORT_DIR).join(&name);
    let manifest = blocking(move || p.export_labels(&dest)).await?;
    Ok(Json(json!({
        "destination": manifest.root,
        "manifest": manifest.root.join(loadsafe_core::dataset::MANIFEST_FILE),
        "records": manifest.records,
    })))
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, platform: Arc<Platform>) -> std::io::Result<()> {
    axum::serve(listener, router(platform)).await
}
