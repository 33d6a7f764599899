//! HTTP/JSON routes over a [`Platform`].
//!
//! Error bodies have the shape `{"error": {"code", "message", "details"?}}`
//! where `code` names the underlying error.

use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use duelbench::domain::{AgeBucket, BenchmarkId, CriterionKind, Gender, ModelRef, SessionId, Timestamp};
use duelbench::platform::{CreateBenchmark, ErrorClass, Platform, PlatformError, SessionRequest};
use duelbench::ranking::{Interval, RankingResult};
use duelbench::scheduler::Response as TaskResponse;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

/// Milliseconds since the Unix epoch, injectable for tests.
pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as Timestamp)
            .unwrap_or(0)
    })
}

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub admin_token: Option<Arc<str>>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(platform: Arc<Platform>) -> Self {
        AppState {
            platform,
            admin_token: None,
            clock: system_clock(),
        }
    }

    pub fn with_admin_token(mut self, token: Option<String>) -> Self {
        self.admin_token = token.map(Arc::from);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }
}

#[derive(Debug)]
pub enum ApiError {
    Platform(PlatformError),
    Request {
        status: StatusCode,
        code: &'static str,
        message: String,
    },
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::Request {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        ApiError::Platform(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request("MalformedBody", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request("MalformedQuery", e.body_text())
    }
}

pub fn status_of(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::BadRequest => StatusCode::BAD_REQUEST,
        ErrorClass::Forbidden => StatusCode::FORBIDDEN,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Platform(e) => {
                let status = status_of(e.class());
                if status == StatusCode::INTERNAL_SERVER_ERROR {
                    tracing::error!(error = %e, "request failed");
                }
                let mut error = json!({ "code": e.code(), "message": e.to_string() });
                if let Some(details) = e.details() {
                    error["details"] = details;
                }
                (status, json!({ "error": error }))
            }
            ApiError::Request { status, code, message } => {
                (status, json!({ "error": { "code": code, "message": message } }))
            }
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn require_admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(token) = &state.admin_token else { return Ok(()) };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token.as_ref()) {
        Ok(())
    } else {
        Err(ApiError::Request {
            status: StatusCode::UNAUTHORIZED,
            code: "Unauthorized",
            message: "this call needs the admin bearer token".into(),
        })
    }
}

/// Runs blocking platform work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, PlatformError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Request {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "Internal",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_benchmarks(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.platform.list_benchmarks())
}

async fn create_benchmark(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<CreateBenchmark>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let Json(request) = body?;
    let id = state.platform.create_benchmark(request)?;
    Ok((StatusCode::CREATED, Json(json!({ "benchmark_id": id, "status": "draft" }))))
}

async fn get_benchmark(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.platform.benchmark_summary(&id.into())?))
}

async fn add_prompts(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let platform = state.platform.clone();
    let report = blocking(move || platform.add_prompts(&id.into(), &body)).await?;
    Ok(Json(report))
}

async fn add_manifest(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let platform = state.platform.clone();
    let report = blocking(move || platform.add_manifest(&id.into(), &body)).await?;
    Ok(Json(json!({
        "added": report.assets.len(),
        "asset_count": report.asset_count,
        "missing_cells": report.missing_cells,
    })))
}

async fn add_validation_pool(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let platform = state.platform.clone();
    let report = blocking(move || platform.add_validation_pool(&id.into(), &body)).await?;
    Ok(Json(report))
}

async fn launch(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    require_admin(&state, &headers)?;
    let platform = state.platform.clone();
    let report = blocking(move || platform.launch(&id.into())).await?;
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
pub struct SessionQuery {
    pub annotator_id: String,
    pub country_code: Option<String>,
    pub locale: Option<String>,
    pub age_bucket: Option<AgeBucket>,
    pub gender: Option<Gender>,
    pub criterion: Option<CriterionKind>,
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<SessionQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    if q.annotator_id.trim().is_empty() {
        return Err(ApiError::bad_request("MalformedQuery", "annotator_id must not be empty"));
    }
    let request = SessionRequest {
        annotator_id: q.annotator_id.into(),
        country_code: q.country_code,
        locale: q.locale,
        age_bucket: q.age_bucket,
        gender: q.gender,
        criterion: q.criterion,
    };
    let now = (state.clock)();
    Ok(Json(state.platform.get_session(&id.into(), &request, now)?))
}

#[derive(Debug, Deserialize)]
pub struct ResponsesBody {
    pub responses: Vec<TaskResponse>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ResponsesReceipt {
    pub accepted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_ms: Option<u64>,
}

async fn post_responses(
    State(state): State<AppState>,
    UrlPath(session): UrlPath<String>,
    body: Result<Json<ResponsesBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    let now = (state.clock)();
    let outcome = state
        .platform
        .post_responses(&SessionId::from(session), &body.responses, now)?;
    Ok(Json(ResponsesReceipt {
        accepted: outcome.accepted_votes,
        penalty_ms: (outcome.penalty_ms > 0).then_some(outcome.penalty_ms),
    }))
}

#[derive(Debug, Deserialize)]
pub struct RankingQuery {
    pub criterion: Option<CriterionKind>,
    #[serde(default)]
    pub ci: bool,
}

/// One leaderboard line, scores also rendered to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub model_id: String,
    pub display_name: String,
    pub score: f64,
    pub score_display: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingView {
    #[serde(flatten)]
    pub result: RankingResult,
    pub table: Vec<RankingRow>,
}

pub fn ranking_rows(result: &RankingResult, models: &[ModelRef]) -> Vec<RankingRow> {
    result
        .ordering
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let i = result.models.iter().position(|m| m == id).expect("ordering lists fitted models");
            let score = result.scores.as_slice()[i];
            RankingRow {
                rank: k + 1,
                model_id: id.to_string(),
                display_name: models
                    .iter()
                    .find(|m| &m.model_id == id)
                    .map(|m| m.display_name.clone())
                    .unwrap_or_else(|| id.to_string()),
                score,
                score_display: format!("{score:.2}"),
                interval: result.confidence_intervals.as_ref().map(|ci| ci[i]),
            }
        })
        .collect()
}

async fn rankings(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<RankingQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let criterion = q
        .criterion
        .ok_or_else(|| ApiError::bad_request("MalformedQuery", "criterion is required"))?;
    let id = BenchmarkId::from(id);
    let platform = state.platform.clone();
    let (result, models) = blocking(move || {
        let result = platform.rankings(&id, criterion, q.ci)?;
        Ok((result, platform.plan(&id)?.models))
    })
    .await?;
    let table = ranking_rows(&result, &models);
    Ok(Json(RankingView { result, table }))
}

async fn progress(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.platform.progress(&id.into())?))
}

async fn demographics(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.platform.demographics(&id.into())?))
}

async fn not_found() -> ApiError {
    ApiError::Request {
        status: StatusCode::NOT_FOUND,
        code: "NotFound",
        message: "no such route".into(),
    }
}

fn cors(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]),
    )
}

/// The API routes alone.
pub fn api_routes(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/benchmarks", get(list_benchmarks).post(create_benchmark))
        .route("/v1/benchmarks/{id}", get(get_benchmark))
        .route("/v1/benchmarks/{id}/prompts", post(add_prompts))
        .route("/v1/benchmarks/{id}/manifest", post(add_manifest))
        .route("/v1/benchmarks/{id}/validation-pool", post(add_validation_pool))
        .route("/v1/benchmarks/{id}/launch", post(launch))
        .route("/v1/benchmarks/{id}/session", get(get_session))
        .route("/v1/sessions/{id}/responses", post(post_responses))
        .route("/v1/benchmarks/{id}/rankings", get(rankings))
        .route("/v1/benchmarks/{id}/progress", get(progress))
        .route("/v1/benchmarks/{id}/demographics", get(demographics))
        .with_state(state)
}

/// API routes plus CORS and, when given, the static UI bundle for every
/// other path.
pub fn router(state: AppState, static_dir: Option<&Path>, cors_origins: &[String]) -> Router {
    let api = api_routes(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.fallback(not_found),
    };
    match cors(cors_origins) {
        Some(layer) => app.layer(layer),
        None => app,
    }
}
