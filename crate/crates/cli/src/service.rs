//! HTTP/JSON scoring service.
//!
//! - `GET  /v1/health`   corpus status, count, dims, checksum
//! - `POST /v1/score`    score a group of candidate captions for one image
//! - `POST /v1/retrieve` top-K support set for one caption embedding
//!
//! One corpus per process, loaded once and never mutated. Until it is loaded
//! every endpoint answers 503 `CORPUS_NOT_LOADED`. Errors are
//! `{"code": "...", "message": "..."}`.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use cim_core::{
    normalize, score_group, top_k, CimError, CorpusIndex, GroupScore, RewardParams, SupportSet,
    UnitVector,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug)]
pub struct AppState {
    corpus: OnceLock<Arc<CorpusIndex>>,
    defaults: RewardParams,
}

impl AppState {
    /// State with no corpus yet; see [`AppState::install`].
    pub fn empty(defaults: RewardParams) -> Self {
        AppState {
            corpus: OnceLock::new(),
            defaults,
        }
    }

    pub fn loaded(index: CorpusIndex, defaults: RewardParams) -> Self {
        let state = Self::empty(defaults);
        state.install(index);
        state
    }

    /// Installs the corpus. Only the first call has any effect.
    pub fn install(&self, index: CorpusIndex) -> bool {
        self.corpus.set(Arc::new(index)).is_ok()
    }

    pub fn corpus(&self) -> Option<&Arc<CorpusIndex>> {
        self.corpus.get()
    }

    pub fn defaults(&self) -> &RewardParams {
        &self.defaults
    }
}

/// Optional per-request overrides of the server's reward parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_self: Option<bool>,
}

impl ParamsOverride {
    pub fn apply(&self, base: &RewardParams) -> RewardParams {
        RewardParams {
            k: self.k.unwrap_or(base.k),
            beta: self.beta.unwrap_or(base.beta),
            decay_base: self.decay_base.unwrap_or(base.decay_base),
            exclude_self: self.exclude_self.unwrap_or(base.exclude_self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub source_image: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    pub candidates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsOverride>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreResponse {
    #[serde(flatten)]
    pub result: GroupScore,
    pub corpus_checksum: String,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub query: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub corpus_count: usize,
    /// `[image_dim, text_dim]`
    pub dims: [usize; 2],
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    fn not_loaded() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "CORPUS_NOT_LOADED",
            "corpus is not loaded",
        )
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    pub fn code(&self) -> &str {
        &self.body.code
    }
}

impl From<CimError> for ApiError {
    fn from(e: CimError) -> Self {
        let status = match e {
            CimError::Io { .. } | CimError::Format(_) | CimError::Json(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self.body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.to_string()))
}

fn normalize_rows(rows: &[Vec<f64>]) -> Result<Vec<UnitVector>, CimError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            normalize(r).map_err(|e| match e {
                CimError::ZeroVector { .. } => CimError::ZeroVector { row: Some(i) },
                other => other,
            })
        })
        .collect()
}

/// Validates and scores a request against `index`. This is exactly what
/// `POST /v1/score` computes, minus timing.
pub fn score_request(
    index: &CorpusIndex,
    defaults: &RewardParams,
    req: &ScoreRequest,
) -> Result<GroupScore, CimError> {
    if req.candidates.len() < 2 {
        return Err(CimError::GroupTooSmall(req.candidates.len()));
    }
    let params = req.params.as_ref().map_or(*defaults, |o| o.apply(defaults));
    params.validate()?;
    let source = normalize(&req.source_image)?;
    let candidates = normalize_rows(&req.candidates)?;
    score_group(
        &source,
        &candidates,
        index,
        &params,
        req.source_id.as_deref(),
    )
}

pub fn retrieve_request(
    index: &CorpusIndex,
    defaults: &RewardParams,
    req: &RetrieveRequest,
) -> Result<SupportSet, CimError> {
    let k = req.k.unwrap_or(defaults.k);
    if k == 0 {
        return Err(CimError::InvalidParams("k must be at least 1".into()));
    }
    let query = normalize(&req.query)?;
    top_k(&query, index, k, req.exclude_id.as_deref())
}

pub fn health(state: &AppState) -> Result<HealthResponse, ApiError> {
    let index = state.corpus().ok_or_else(ApiError::not_loaded)?;
    Ok(HealthResponse {
        status: "ok".into(),
        corpus_count: index.len(),
        dims: [index.image_dim(), index.text_dim()],
        checksum: index.checksum().to_owned(),
    })
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Response {
    match health(&state) {
        Ok(h) => json_response(StatusCode::OK, &h),
        Err(e) => e.into_response(),
    }
}

async fn score_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let run = async {
        let index = state.corpus().cloned().ok_or_else(ApiError::not_loaded)?;
        let req: ScoreRequest = parse(&body)?;
        let defaults = *state.defaults();
        tokio::task::spawn_blocking(move || {
            let start = Instant::now();
            let result = score_request(&index, &defaults, &req)?;
            Ok::<_, ApiError>(ScoreResponse {
                result,
                corpus_checksum: index.checksum().to_owned(),
                timing_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
    };
    match run.await {
        Ok(resp) => json_response(StatusCode::OK, &resp),
        Err(e) => e.into_response(),
    }
}

async fn retrieve_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let run = async {
        let index = state.corpus().cloned().ok_or_else(ApiError::not_loaded)?;
        let req: RetrieveRequest = parse(&body)?;
        let defaults = *state.defaults();
        tokio::task::spawn_blocking(move || {
            retrieve_request(&index, &defaults, &req).map_err(ApiError::from)
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
    };
    match run.await {
        Ok(set) => json_response(StatusCode::OK, &set),
        Err(e) => e.into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health_handler))
        .route("/v1/score", post(score_handler))
        .route("/v1/retrieve", post(retrieve_handler))
        .with_state(state)
}
