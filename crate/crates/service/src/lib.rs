//! HTTP API for the timbre-similarity engine: stimuli and audio for the
//! annotation board, annotation intake, per-subject and consensus
//! retraining, and query-by-example.

mod state;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use scatsim_core::config::RunConfig;
use scatsim_core::corpus::{render_imt_name, Imt};
use scatsim_core::perceptual::Annotation;
use scatsim_core::pipeline::QueryResponse;
use scatsim_core::retrieval::SearchIndex;
use scatsim_core::Error;

pub use state::{check_subject, AppState, JobInfo, JobStatus, Session, CONSENSUS, IDENTITY};

/// Environment variable naming the TOML run configuration.
pub const CONFIG_ENV: &str = "SCATTER_SIM_CONFIG";

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub missing: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            missing: Vec::new(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownId(_) => StatusCode::NOT_FOUND,
            Error::Audio(_) | Error::SampleRateMismatch { .. } => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            Error::InvalidParameter(_) | Error::InvalidInput(_) | Error::Annotation(_) | Error::Json(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::FingerprintMismatch { .. } | Error::DimensionMismatch { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut err = ApiError::new(status, e.to_string());
        if let Error::Annotation(msg) = &e {
            if let Some(list) = msg.strip_prefix("missing stimuli: ") {
                err.missing = list.split(", ").map(String::from).collect();
            }
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.missing.is_empty() {
            body["missing"] = json!(self.missing);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/stimuli", get(list_stimuli))
        .route("/v1/audio/{id}", get(audio))
        .route("/v1/annotations", post(submit_annotation))
        .route("/v1/retrain/{subject}", post(retrain))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/metrics", get(metrics))
        .route("/v1/query", post(query))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let (Some(token), true) = (&state.config.service.token, req.method() == axum::http::Method::POST) {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Serialize)]
struct StimulusEntry {
    id: String,
    imt: Imt,
    audio_url: String,
    canonical: bool,
}

async fn list_stimuli(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<StimulusEntry>>> {
    let session = state.snapshot();
    let corpus = match &session.corpus {
        Some(c) if !c.is_empty() => c.clone(),
        _ => return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no corpus loaded")),
    };
    let entries = corpus
        .entries
        .iter()
        .map(|e| StimulusEntry {
            canonical: state.stimuli.contains(&e.id) || state.stimuli.contains(&render_imt_name(&e.imt)),
            audio_url: format!("/v1/audio/{}", e.id),
            id: e.id.clone(),
            imt: e.imt.clone(),
        })
        .collect();
    Ok(Json(entries))
}

async fn audio(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.snapshot();
    let corpus = session
        .corpus
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no corpus loaded"))?;
    let entry = corpus.get(&id).ok_or_else(|| ApiError::from(Error::UnknownId(id.clone())))?;
    let bytes = tokio::fs::read(corpus.resolve(entry))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn submit_annotation(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let annotation: Annotation = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("annotation rejected: {e}")))?;
    let subject = annotation.subject.clone();
    let st = state.clone();
    let version = tokio::task::spawn_blocking(move || st.submit_annotation(annotation))
        .await
        .map_err(join_error)??;
    let mut body = json!({ "subject": subject, "version": version });
    if state.config.service.auto_retrain {
        match enqueue(&state, &subject) {
            Ok(job) => body["job"] = json!(job),
            Err(e) => log::warn!("auto-retrain of {subject} not queued: {}", e.message),
        }
    }
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

/// Registers a job for `subject` and starts it on the blocking pool.
fn enqueue(state: &Arc<AppState>, subject: &str) -> ApiResult<String> {
    let session = state.snapshot();
    let known = if subject == CONSENSUS {
        !session.annotations.is_empty()
    } else {
        session.annotations.contains_key(subject)
    };
    if !known {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no annotation stored for {subject:?}"),
        ));
    }
    let id = {
        let mut jobs = state.jobs.lock().expect("job table poisoned");
        let busy = jobs
            .values()
            .any(|j| j.subject == subject && matches!(j.status, JobStatus::Queued | JobStatus::Running));
        if busy {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("a retraining job for {subject:?} is already running"),
            ));
        }
        let id = state.next_job_id();
        jobs.insert(
            id.clone(),
            JobInfo {
                id: id.clone(),
                subject: subject.to_string(),
                status: JobStatus::Queued,
                error: None,
                report: None,
            },
        );
        id
    };
    let (st, job, subject) = (state.clone(), id.clone(), subject.to_string());
    tokio::spawn(async move {
        let _permit = match st.job_gate() {
            Some(gate) => Some(gate.acquire_owned().await.expect("job gate closed")),
            None => None,
        };
        set_status(&st, &job, |j| j.status = JobStatus::Running);
        let worker = st.clone();
        let outcome = tokio::task::spawn_blocking(move || worker.run_retrain(&subject)).await;
        set_status(&st, &job, |j| match outcome {
            Ok(Ok(report)) => {
                j.status = JobStatus::Done;
                j.report = Some(report);
            }
            Ok(Err(e)) => {
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }
        });
    });
    Ok(id)
}

fn set_status(state: &AppState, job: &str, f: impl FnOnce(&mut JobInfo)) {
    if let Some(j) = state.jobs.lock().expect("job table poisoned").get_mut(job) {
        f(j);
        log::info!("{} ({}) is {:?}", j.id, j.subject, j.status);
    }
}

async fn retrain(State(state): State<Arc<AppState>>, Path(subject): Path<String>) -> ApiResult<Response> {
    let job = enqueue(&state, &subject)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": job, "subject": subject }))).into_response())
}

async fn job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobInfo>> {
    state
        .jobs
        .lock()
        .expect("job table poisoned")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| Error::UnknownId(id).into())
}

#[derive(Debug, Serialize)]
struct MetricEntry {
    id: String,
    dimension: usize,
    fingerprint: String,
    identity: bool,
    samples: Option<usize>,
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<Vec<MetricEntry>> {
    let session = state.snapshot();
    Json(
        session
            .metrics
            .iter()
            .map(|(id, m)| MetricEntry {
                id: id.clone(),
                dimension: m.dimension,
                fingerprint: m.fingerprint.clone(),
                identity: m.is_identity(),
                samples: (!m.is_identity()).then_some(m.provenance.samples),
            })
            .collect(),
    )
}

#[derive(Debug, Default, Deserialize)]
struct QueryParams {
    id: Option<String>,
    metric: Option<String>,
    rank: Option<usize>,
}

enum QueryInput {
    Stored(String),
    Upload(Vec<u8>),
}

async fn query(
    State(state): State<Arc<AppState>>,
    Query(params): Query<QueryParams>,
    headers: HeaderMap,
    req: Request,
) -> ApiResult<Response> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let mut p = params;
    let mut upload = None;
    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?
        {
            let name = field.name().unwrap_or_default().to_string();
            let data = field
                .bytes()
                .await
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
            match name.as_str() {
                "audio" | "file" => upload = Some(data.to_vec()),
                "metric" => p.metric = Some(text_field(&data)?),
                "rank" => p.rank = Some(parse_rank(&text_field(&data)?)?),
                "id" => p.id = Some(text_field(&data)?),
                _ => {}
            }
        }
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
        if !body.is_empty() {
            let b: QueryParams = serde_json::from_slice(&body)
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("bad query body: {e}")))?;
            p.id = b.id.or(p.id);
            p.metric = b.metric.or(p.metric);
            p.rank = b.rank.or(p.rank);
        }
    }
    let input = match (upload, p.id) {
        (Some(bytes), _) => QueryInput::Upload(bytes),
        (None, Some(id)) => QueryInput::Stored(id),
        (None, None) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "query needs an id or an audio upload")),
    };
    let rank = p.rank.unwrap_or(state.config.retrieval.rank);
    if rank == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "rank must be at least 1"));
    }
    let session = state.snapshot();
    let metric_id = p.metric.unwrap_or_else(|| default_metric(&session.metrics));
    let st = state.clone();
    let json = tokio::task::spawn_blocking(move || run_query(&st, &session, &metric_id, input, rank))
        .await
        .map_err(join_error)??;
    Ok(([(header::CONTENT_TYPE, "application/json")], json).into_response())
}

fn text_field(data: &[u8]) -> ApiResult<String> {
    String::from_utf8(data.to_vec())
        .map(|s| s.trim().to_string())
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "form field is not UTF-8"))
}

fn parse_rank(s: &str) -> ApiResult<usize> {
    s.parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("rank {s:?} is not a count")))
}

fn default_metric<T>(metrics: &BTreeMap<String, T>) -> String {
    if metrics.contains_key(CONSENSUS) {
        CONSENSUS.into()
    } else {
        IDENTITY.into()
    }
}

fn run_query(state: &AppState, session: &Session, metric_id: &str, input: QueryInput, rank: usize) -> ApiResult<String> {
    let store = session
        .store
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no feature store loaded"))?;
    let metric = session
        .metrics
        .get(metric_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown metric {metric_id:?}")))?;
    let index = SearchIndex::new(store, metric)?;
    let result = match input {
        QueryInput::Stored(id) => index.query_id(&id, rank)?,
        QueryInput::Upload(bytes) => {
            let raw = state.extractor()?.wav_features(&bytes, "upload")?;
            let g = session
                .gaussianizer
                .as_ref()
                .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no Gaussianizer loaded"))?;
            index.query_row(&g.apply_row(&raw)?, rank)?
        }
    };
    Ok(QueryResponse::new(result, metric_id, rank, session.corpus.as_deref()).to_json())
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: RunConfig) -> scatsim_core::Result<()> {
    let bind = config.service.bind.clone();
    let state = Arc::new(tokio::task::spawn_blocking(move || AppState::new(config)).await.map_err(|e| {
        Error::Io(std::io::Error::other(e.to_string()))
    })??);
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await?;
    Ok(())
}
