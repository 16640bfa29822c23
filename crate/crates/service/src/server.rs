//! HTTP API. Handlers validate every mutation against the core invariants
//! before it reaches the store; store and backend work runs on the blocking
//! pool, and jobs run one at a time on a background worker.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use uifeedback::arena::{self, AgreementRecord, Battle, RatingConfig, ScheduleMode, ScheduledMatch, Winner};
use uifeedback::corpus::{ModelOutput, Store};
use uifeedback::feedback::{self, AnnotationRecord, Interface, Side, TaskScheduler};
use uifeedback::gateway::Backends;
use uifeedback::hash::ContentHash;
use uifeedback::ids::DescriptionId;
use uifeedback::Error;

use crate::error::ServiceError;
use crate::jobs::{run_job, JobReport, JobSpec, Parameters};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

/// Error response: `{"error": ..., "field": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound { .. } | Error::Exhausted { .. } => StatusCode::NOT_FOUND,
            Error::Validation { .. } | Error::Integrity { .. } | Error::InvalidInput(_) | Error::Json(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Config(_) => StatusCode::CONFLICT,
            Error::Backend { .. } | Error::Render { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let field = match &e {
            Error::Validation { field, .. } => Some(field.clone()),
            _ => None,
        };
        ApiError {
            status,
            message: e.to_string(),
            field,
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Core(e) => e.into(),
            ServiceError::Parameters { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub spec: JobSpec,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<JobReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type JobTable = Arc<Mutex<BTreeMap<String, JobStatus>>>;

/// Runs queued jobs in submission order on one background thread.
struct JobQueue {
    table: JobTable,
    sender: Mutex<mpsc::Sender<String>>,
    next: AtomicU64,
}

impl JobQueue {
    fn start(store: Arc<Store>, backends: Arc<Backends>) -> Self {
        let table: JobTable = Arc::default();
        let (sender, receiver) = mpsc::channel::<String>();
        let worker_table = table.clone();
        std::thread::Builder::new()
            .name("uifeedback-jobs".into())
            .spawn(move || {
                for id in receiver {
                    let spec = {
                        let mut t = worker_table.lock().expect("job table poisoned");
                        let Some(status) = t.get_mut(&id) else { continue };
                        status.state = JobState::Running;
                        status.spec.clone()
                    };
                    let result = run_job(&store, &backends, &spec);
                    let mut t = worker_table.lock().expect("job table poisoned");
                    let status = t.get_mut(&id).expect("job registered before queueing");
                    match result {
                        Ok(report) => {
                            status.state = JobState::Succeeded;
                            status.report = Some(report);
                        }
                        Err(e) => {
                            log::error!("job {id} failed: {e}");
                            status.state = JobState::Failed;
                            status.error = Some(e.to_string());
                        }
                    }
                }
            })
            .expect("spawn job worker");
        JobQueue {
            table,
            sender: Mutex::new(sender),
            next: AtomicU64::new(1),
        }
    }

    fn submit(&self, spec: JobSpec) -> String {
        let id = format!("job-{:06}", self.next.fetch_add(1, Ordering::Relaxed));
        self.table.lock().expect("job table poisoned").insert(
            id.clone(),
            JobStatus {
                job_id: id.clone(),
                spec,
                state: JobState::Queued,
                report: None,
                error: None,
            },
        );
        self.sender
            .lock()
            .expect("job sender poisoned")
            .send(id.clone())
            .expect("job worker alive");
        id
    }

    fn status(&self, id: &str) -> Option<JobStatus> {
        self.table.lock().expect("job table poisoned").get(id).cloned()
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    pub backends: Arc<Backends>,
    scheduler: TaskScheduler,
    matches: Mutex<HashMap<String, ScheduledMatch>>,
    match_counter: AtomicU64,
    rng: Mutex<ChaCha8Rng>,
    jobs: JobQueue,
}

impl AppState {
    pub fn new(store: Arc<Store>, backends: Arc<Backends>, seed: u64) -> Arc<Self> {
        Arc::new(AppState {
            jobs: JobQueue::start(store.clone(), backends.clone()),
            store,
            backends,
            scheduler: TaskScheduler::new(),
            matches: Mutex::default(),
            match_counter: AtomicU64::new(1),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }
}

type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker panicked: {e}")))?
}

fn annotator(headers: &HeaderMap, fallback: Option<String>) -> Option<String> {
    headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .or(fallback)
        .filter(|a| !a.trim().is_empty())
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    interface: String,
    annotator: Option<String>,
}

async fn next_task(State(app): State<Shared>, headers: HeaderMap, Query(q): Query<TaskQuery>) -> ApiResult<Response> {
    let interface: Interface = q.interface.parse()?;
    let who = annotator(&headers, q.annotator).ok_or_else(|| ApiError::bad_request("annotator id required"))?;
    blocking(move || {
        let state = app.store.read();
        let mut rng = app.rng.lock().expect("rng poisoned");
        let task = app.scheduler.next_task(&state, interface, &who, &mut *rng)?;
        Ok(Json(task).into_response())
    })
    .await
}

/// Accepts one JSON record, or several as JSON lines.
async fn post_annotations(State(app): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let mut records = Vec::new();
    let single = serde_json::from_str::<AnnotationRecord>(text);
    match single {
        Ok(r) => records.push(r),
        Err(_) => {
            for r in feedback::read_records(text.as_bytes())? {
                records.push(r);
            }
        }
    }
    if records.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no records in body"));
    }
    let who = annotator(&headers, None);
    blocking(move || {
        let mut accepted = Vec::new();
        for mut record in records {
            if let Some(who) = &who {
                set_annotator(&mut record, who)?;
            }
            if record.record_id().as_str().is_empty() {
                record = record.with_derived_id();
            }
            record.validate_shape()?;
            record.validate(&app.store.read())?;
            let created = app.store.add_annotation(record.clone())?;
            accepted.push(json!({ "record_id": record.record_id(), "created": created }));
        }
        Ok((StatusCode::CREATED, Json(json!({ "accepted": accepted }))).into_response())
    })
    .await
}

fn set_annotator(record: &mut AnnotationRecord, who: &str) -> ApiResult<()> {
    let slot = match record {
        AnnotationRecord::Ranking(r) => &mut r.annotator_id,
        AnnotationRecord::Commenting(r) => &mut r.annotator_id,
        AnnotationRecord::Sketching(r) => &mut r.annotator_id,
        AnnotationRecord::Revising(r) => &mut r.annotator_id,
    };
    if slot.is_empty() {
        *slot = who.to_owned();
    } else if slot != who {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "annotator_id does not match the annotator header"));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct MatchQuery {
    #[serde(default)]
    mode: ScheduleMode,
}

/// What a judge sees: two screenshots and the description. No model names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchPayload {
    pub match_id: String,
    pub description_id: DescriptionId,
    pub description: String,
    pub left_image: ContentHash,
    pub right_image: ContentHash,
}

async fn arena_match(State(app): State<Shared>, Query(q): Query<MatchQuery>) -> ApiResult<Json<MatchPayload>> {
    blocking(move || {
        let (scheduled, payload_parts) = {
            let state = app.store.read();
            let outputs = state.model_outputs();
            let mut by_model: BTreeMap<&str, BTreeMap<&DescriptionId, &ContentHash>> = BTreeMap::new();
            for o in outputs {
                by_model.entry(&o.model).or_default().insert(&o.description_id, &o.screenshot_ref);
            }
            let models: Vec<String> = by_model.keys().map(|m| m.to_string()).collect();
            // Descriptions every model has an output for.
            let descriptions: Vec<DescriptionId> = match by_model.values().next() {
                Some(first) => first
                    .keys()
                    .filter(|d| by_model.values().all(|m| m.contains_key(*d)))
                    .map(|d| (*d).clone())
                    .collect(),
                None => Vec::new(),
            };
            let mut rng = app.rng.lock().expect("rng poisoned");
            let m = arena::schedule_match(&models, &descriptions, state.battles(), q.mode, &mut *rng)?;
            let shot = |model: &str| by_model[model][&m.description_id].clone();
            let (left, right) = if m.a_on_left {
                (shot(&m.model_a), shot(&m.model_b))
            } else {
                (shot(&m.model_b), shot(&m.model_a))
            };
            let description = state.description(&m.description_id)?.text.clone();
            let token: u64 = rng.random();
            (m, (description, left, right, token))
        };
        let (description, left_image, right_image, token) = payload_parts;
        let match_id = format!("match-{:06}-{token:016x}", app.match_counter.fetch_add(1, Ordering::Relaxed));
        let payload = MatchPayload {
            match_id: match_id.clone(),
            description_id: scheduled.description_id.clone(),
            description,
            left_image,
            right_image,
        };
        app.matches.lock().expect("matches poisoned").insert(match_id, scheduled);
        Ok(Json(payload))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct JudgmentBody {
    match_id: String,
    winner: Side,
    #[serde(default)]
    judge_id: String,
}

async fn arena_judgment(State(app): State<Shared>, headers: HeaderMap, Json(body): Json<JudgmentBody>) -> ApiResult<Response> {
    let judge = annotator(&headers, Some(body.judge_id.clone()))
        .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "judge_id required"))?;
    blocking(move || {
        let m = app
            .matches
            .lock()
            .expect("matches poisoned")
            .get(&body.match_id)
            .cloned()
            .ok_or_else(|| Error::not_found("match", body.match_id.clone()))?;
        let a_won = matches!((body.winner, m.a_on_left), (Side::Left, true) | (Side::Right, false));
        let battle = Battle {
            model_a: m.model_a,
            model_b: m.model_b,
            description_id: m.description_id,
            winner: if a_won { Winner::A } else { Winner::B },
            judge_id: judge,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        battle.validate()?;
        app.store.add_battle(battle)?;
        app.matches.lock().expect("matches poisoned").remove(&body.match_id);
        Ok((StatusCode::CREATED, Json(json!({ "recorded": true }))).into_response())
    })
    .await
}

async fn arena_output(State(app): State<Shared>, Json(output): Json<ModelOutput>) -> ApiResult<Response> {
    blocking(move || {
        if output.model.trim().is_empty() {
            return Err(Error::validation("model", "must not be empty").into());
        }
        {
            let state = app.store.read();
            state.description(&output.description_id)?;
            if !state.has_blob(&output.screenshot_ref) {
                return Err(Error::not_found("blob", output.screenshot_ref.as_str()).into());
            }
        }
        app.store.add_model_output(output)?;
        Ok(StatusCode::CREATED.into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
struct RatingsQuery {
    #[serde(default)]
    format: Option<String>,
    rounds: Option<usize>,
    seed: Option<u64>,
}

async fn report_ratings(State(app): State<Shared>, Query(q): Query<RatingsQuery>) -> ApiResult<Response> {
    blocking(move || {
        let defaults = RatingConfig::default();
        let cfg = RatingConfig {
            rounds: q.rounds.unwrap_or(defaults.rounds),
            rng_seed: q.seed.unwrap_or(defaults.rng_seed),
            ..defaults
        };
        cfg.validate()?;
        let battles = app.store.read().battles().to_vec();
        let report = arena::rating_report(&battles, &cfg)?;
        Ok(match q.format.as_deref() {
            Some("csv") => ([(header::CONTENT_TYPE, "text/csv")], arena::ratings_csv(&report.ratings)?).into_response(),
            Some("matrix-csv") => ([(header::CONTENT_TYPE, "text/csv")], arena::matrix_csv(&report.win_rates)?).into_response(),
            None | Some("json") => Json(report).into_response(),
            Some(other) => return Err(ApiError::bad_request(format!("unknown format `{other}`"))),
        })
    })
    .await
}

async fn report_agreement(State(app): State<Shared>) -> ApiResult<Response> {
    blocking(move || Ok(Json(arena::agreement(app.store.read().agreement_records())).into_response())).await
}

async fn post_agreement(State(app): State<Shared>, Json(record): Json<AgreementRecord>) -> ApiResult<Response> {
    blocking(move || {
        record.validate()?;
        app.store.add_agreement(record)?;
        Ok(StatusCode::CREATED.into_response())
    })
    .await
}

async fn report_study_stats(State(app): State<Shared>) -> ApiResult<Response> {
    blocking(move || Ok(Json(feedback::study_stats(app.store.read().annotations())).into_response())).await
}

async fn submit_job(State(app): State<Shared>, Json(spec): Json<JobSpec>) -> ApiResult<Response> {
    Parameters::from_spec(&spec)?;
    let id = app.jobs.submit(spec);
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn job_status(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    app.jobs
        .status(&id)
        .map(Json)
        .ok_or_else(|| Error::not_found("job", id).into())
}

async fn get_blob(State(app): State<Shared>, Path(hash): Path<String>) -> ApiResult<Response> {
    let hash = ContentHash::parse(&hash).ok_or_else(|| ApiError::bad_request("malformed content hash"))?;
    blocking(move || {
        let bytes = app.store.blob(&hash)?;
        let kind = if bytes.starts_with(b"\x89PNG") {
            "image/png"
        } else {
            "application/octet-stream"
        };
        Ok(([(header::CONTENT_TYPE, kind)], bytes).into_response())
    })
    .await
}

async fn put_blob(State(app): State<Shared>, body: Bytes) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty upload"));
    }
    blocking(move || {
        let hash = app.store.put_blob(&body)?;
        Ok((StatusCode::CREATED, Json(json!({ "hash": hash }))).into_response())
    })
    .await
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(post_annotations))
        .route("/arena/match", get(arena_match))
        .route("/arena/judgments", post(arena_judgment))
        .route("/arena/outputs", post(arena_output))
        .route("/agreement/ratings", post(post_agreement))
        .route("/reports/ratings", get(report_ratings))
        .route("/reports/agreement", get(report_agreement))
        .route("/reports/study-stats", get(report_study_stats))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .route("/blobs", post(put_blob))
        .route("/blobs/{hash}", get(get_blob))
        .with_state(app)
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(app: Shared, addr: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Startup(format!("bind {addr}: {e}")))?;
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(app))
        .await
        .map_err(|e| ServiceError::Startup(e.to_string()))
}
