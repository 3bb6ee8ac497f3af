//! Axum routes over a shared [`Service`].
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/sessions` | optional `{"condition": "future_you"}` |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/advance` | `{"stage": "<current>", "payload": {...}}` |
//! | POST | `/sessions/{id}/portrait` | multipart, field `portrait` |
//! | POST | `/sessions/{id}/messages` | `{"text": "..."}` |
//! | POST | `/sessions/{id}/messages/retry` | |
//! | GET | `/sessions/{id}/messages` | `?since=<index>` |
//! | GET | `/export.csv` | `?condition=&include_incomplete=` |
//! | GET | `/report` | `?format=json\|text\|tsv` |
//! | GET | `/schema/{phase}` | `present` or `future` |
//! | GET | `/scales` | |
//! | GET | `/blobs/{hash}` | |
//!
//! Errors come back as `{"error": "<kind>", "message": "..."}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use yonder_core::{question_schema, AgingError, ChatError, Condition, MemoryError, Message, Phase};

use crate::{ExportFilter, Service, ServiceError, Stage};

const MAX_PORTRAIT_BYTES: usize = 20 * 1024 * 1024;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

fn classify(e: &ServiceError) -> (StatusCode, &'static str) {
    use ServiceError as E;
    match e {
        E::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        E::WrongStage { .. } => (StatusCode::CONFLICT, "wrong_stage"),
        E::Finished => (StatusCode::CONFLICT, "finished"),
        E::InvalidPayload(_) | E::LifeStory(_) | E::Measures(_) => {
            (StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload")
        }
        E::Aging(AgingError::Decode(_) | AgingError::TooSmall { .. }) => {
            (StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload")
        }
        E::Aging(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        E::Memory(MemoryError::Backend { .. }) | E::Chat(ChatError::Backend(_)) => {
            (StatusCode::BAD_GATEWAY, "backend")
        }
        E::Memory(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        E::Chat(ChatError::EmptyMessage) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload"),
        E::Chat(ChatError::SessionFinished) => (StatusCode::CONFLICT, "finished"),
        E::Chat(ChatError::NotEligible { .. }) => (StatusCode::CONFLICT, "not_eligible"),
        E::Chat(ChatError::ReplyPending | ChatError::NothingToRetry) => (StatusCode::CONFLICT, "retry_state"),
        E::Chat(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        E::Experiment(_) => (StatusCode::UNPROCESSABLE_ENTITY, "analysis"),
        E::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        E::Corrupt(_) => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let body = ErrorBody {
            error: kind.into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(service: &Arc<Service>, f: F) -> ApiResult<T>
where
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    let service = Arc::clone(service);
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError(ServiceError::Storage(std::io::Error::other(e.to_string()))))?
        .map_err(ApiError)
}

fn json_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ServiceError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidPayload(e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    condition: Option<Condition>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceRequest {
    stage: Stage,
    #[serde(default)]
    payload: serde_json::Value,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageRequest {
    #[serde(default)]
    text: String,
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: usize,
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: Option<String>,
}

/// Reply to a message post. On a backend failure the user message and a
/// system notice are in the log and `error` describes the failure.
#[derive(Debug, Serialize, Deserialize)]
pub struct MessageResponse {
    pub reply: Option<Message>,
    pub error: Option<ErrorBody>,
}

async fn create_session(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateRequest = json_body(&body)?;
    let envelope = blocking(&s, move |s| s.create_session(req.condition)).await?;
    Ok((StatusCode::CREATED, Json(envelope)).into_response())
}

async fn get_session(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |s| s.get_session(&id)).await?).into_response())
}

async fn advance(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AdvanceRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::InvalidPayload(e.to_string()))?;
    let view = blocking(&s, move |s| s.advance(&id, req.stage, &req.payload)).await?;
    Ok(Json(view).into_response())
}

async fn upload_portrait(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    mut form: Multipart,
) -> ApiResult<Response> {
    let mut image = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ServiceError::InvalidPayload(e.to_string()))?
    {
        if field.name() == Some("portrait") {
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ServiceError::InvalidPayload(e.to_string()))?;
            image = Some(bytes.to_vec());
        }
    }
    let image = image.ok_or_else(|| ServiceError::InvalidPayload("missing multipart field `portrait`".into()))?;
    let view = blocking(&s, move |s| s.upload_portrait(&id, image)).await?;
    Ok(Json(view).into_response())
}

fn message_response(outcome: Result<Message, ServiceError>) -> Response {
    match outcome {
        Ok(reply) => Json(MessageResponse {
            reply: Some(reply),
            error: None,
        })
        .into_response(),
        Err(e) => {
            let (status, kind) = classify(&e);
            let body = MessageResponse {
                reply: None,
                error: Some(ErrorBody {
                    error: kind.into(),
                    message: e.to_string(),
                }),
            };
            (status, Json(body)).into_response()
        }
    }
}

async fn post_message(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: MessageRequest = json_body(&body)?;
    let outcome = blocking(&s, move |s| s.post_message(&id, &req.text)).await?;
    Ok(message_response(outcome))
}

async fn retry(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let outcome = blocking(&s, move |s| s.retry_reply(&id)).await?;
    Ok(message_response(outcome))
}

async fn messages(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&s, move |s| s.messages_since(&id, q.since)).await?).into_response())
}

async fn export(State(s): State<Arc<Service>>, Query(filter): Query<ExportFilter>) -> ApiResult<Response> {
    let csv = blocking(&s, move |s| s.export_dataset(&filter)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn report(State(s): State<Arc<Service>>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let format = q.format.unwrap_or_else(|| "json".into());
    if !matches!(format.as_str(), "json" | "text" | "tsv") {
        return Err(ServiceError::InvalidPayload(format!("unknown format `{format}`")).into());
    }
    let report = blocking(&s, |s| s.report()).await?;
    Ok(match format.as_str() {
        "text" => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], report.to_text()).into_response(),
        "tsv" => (
            [(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")],
            report.to_tsv(),
        )
            .into_response(),
        _ => ([(header::CONTENT_TYPE, "application/json")], report.to_json()).into_response(),
    })
}

async fn schema(Path(phase): Path<String>) -> ApiResult<Response> {
    let phase = match phase.as_str() {
        "present" => Phase::Present,
        "future" => Phase::Future,
        other => return Err(ServiceError::NotFound(format!("schema phase {other}")).into()),
    };
    Ok(Json(question_schema(phase)).into_response())
}

async fn scales(State(s): State<Arc<Service>>) -> Response {
    Json(s.scales().clone()).into_response()
}

fn sniff(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        "image/jpeg"
    } else {
        "application/octet-stream"
    }
}

async fn blob(State(s): State<Arc<Service>>, Path(hash): Path<String>) -> ApiResult<Response> {
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ServiceError::NotFound(format!("blob {hash}")).into());
    }
    let bytes = blocking(&s, move |s| {
        s.blobs().get(&hash).map_err(|e| match e {
            AgingError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                ServiceError::NotFound(format!("blob {hash}"))
            }
            other => ServiceError::Aging(other),
        })
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, sniff(&bytes))], bytes).into_response())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/advance", post(advance))
        .route(
            "/sessions/{id}/portrait",
            post(upload_portrait).layer(DefaultBodyLimit::max(MAX_PORTRAIT_BYTES)),
        )
        .route("/sessions/{id}/messages", post(post_message).get(messages))
        .route("/sessions/{id}/messages/retry", post(retry))
        .route("/export.csv", get(export))
        .route("/report", get(report))
        .route("/schema/{phase}", get(schema))
        .route("/scales", get(scales))
        .route("/blobs/{hash}", get(blob))
        .with_state(service)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(service: Arc<Service>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}

