//! JSON API over the session store and pipeline.

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashmap::DashMap;
use hmt_core::{
    aggregate_report, fill_answers_with, generate_output_with, generate_questions_for, stage1_config, validate_record,
    AnnotationRecord, BackendError, CatalogError, Clock, CompletionBackend, EvalError, FileStore, KaRegime, NaHandling,
    PipelineError, QuestionLoopLimits, Regime, Session, StoreError, TaskCatalog, Voice,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;
use uuid::Uuid;

pub struct AppState {
    catalog: Arc<TaskCatalog>,
    store: FileStore,
    backend: Arc<dyn CompletionBackend>,
    clock: Arc<dyn Clock>,
    limits: QuestionLoopLimits,
    locks: DashMap<Uuid, Arc<Mutex<()>>>,
}

impl AppState {
    pub fn new(
        catalog: Arc<TaskCatalog>,
        store: FileStore,
        backend: Arc<dyn CompletionBackend>,
        clock: Arc<dyn Clock>,
        limits: QuestionLoopLimits,
    ) -> Arc<Self> {
        Arc::new(Self {
            catalog,
            store,
            backend,
            clock,
            limits,
            locks: DashMap::new(),
        })
    }

    fn lock_for(&self, id: Uuid) -> Arc<Mutex<()>> {
        self.locks.entry(id).or_default().clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl ToString) -> Self {
        Self {
            status,
            error,
            detail: detail.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.error, "detail": self.detail }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        use PipelineError::*;
        let (status, name) = match &e {
            WrongStage { .. } => (StatusCode::CONFLICT, "WrongStage"),
            TaskMismatch { .. } => (StatusCode::CONFLICT, "TaskMismatch"),
            IndexOutOfRange { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "IndexOutOfRange"),
            BlankAnswer(_) => (StatusCode::UNPROCESSABLE_ENTITY, "BlankAnswer"),
            InvalidLimits(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidLimits"),
            Prompt(_) => (StatusCode::UNPROCESSABLE_ENTITY, "Prompt"),
            NoQuestionsProduced => (StatusCode::BAD_GATEWAY, "NoQuestionsProduced"),
            NonQuestion(_) => (StatusCode::BAD_GATEWAY, "NonQuestion"),
            EmptyCompletion(_) => (StatusCode::BAD_GATEWAY, "EmptyCompletion"),
            Backend(b) => (StatusCode::BAD_GATEWAY, backend_name(b)),
        };
        Self::new(status, name, e)
    }
}

fn backend_name(e: &BackendError) -> &'static str {
    match e {
        BackendError::InvalidRequest(_) => "InvalidRequest",
        BackendError::Transport(_) => "Transport",
        BackendError::Auth(_) => "Auth",
        BackendError::RateLimited(_) => "RateLimited",
        BackendError::Rejected { .. } => "Rejected",
        BackendError::Protocol(_) => "Protocol",
        BackendError::FixtureExhausted => "FixtureExhausted",
        BackendError::EmptyFixture => "EmptyFixture",
        BackendError::InvalidFixture(_) => "InvalidFixture",
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, name) = match &e {
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            StoreError::VersionMismatch { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "VersionMismatch"),
            StoreError::SerializationError(_) => (StatusCode::INTERNAL_SERVER_ERROR, "SerializationError"),
            StoreError::StorageFull(_) => (StatusCode::INSUFFICIENT_STORAGE, "StorageFull"),
            StoreError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Io"),
        };
        Self::new(status, name, e)
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let name = match &e {
            EvalError::WrongArity(_) => "WrongArity",
            EvalError::EmptyBank(_) => "EmptyBank",
            EvalError::IncompleteTriple { .. } => "IncompleteTriple",
            EvalError::UnknownTask(_) => "UnknownTask",
            EvalError::MissingCountAbsent { .. } => "MissingCountAbsent",
            EvalError::InvalidRecord(_) => "InvalidRecord",
            EvalError::Parse { .. } => "Parse",
        };
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, name, e)
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownTask(_) => Self::new(StatusCode::NOT_FOUND, "UnknownTask", e),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Catalog", e),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, reporting failures in the API's error shape.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        bytes
    };
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidBody", e))
}

fn parse_id(raw: &str) -> ApiResult<Uuid> {
    Uuid::parse_str(raw)
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("session {raw} not found")))
}

/// Runs blocking store and backend work off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e))?
}

/// Loads, transforms and saves one session while holding its lock.
async fn mutate<F>(state: Arc<AppState>, id: Uuid, f: F) -> ApiResult<Session>
where
    F: FnOnce(&AppState, &Session) -> ApiResult<Session> + Send + 'static,
{
    let lock = state.lock_for(id);
    let _guard = lock.lock().await;
    blocking(move || {
        let current = state.store.load(id)?.session;
        let next = f(&state, &current)?;
        state.store.save(&next)?;
        Ok(next)
    })
    .await
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(list_tasks))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/:id", get(get_session))
        .route("/api/sessions/:id/questions", post(post_questions))
        .route("/api/sessions/:id/answers", post(post_answers))
        .route("/api/sessions/:id/output", post(post_output))
        .route("/api/annotations", post(post_annotations))
        .route("/api/report", get(get_report))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route") }),
    }
}

#[derive(Serialize)]
struct TaskSummary<'a> {
    name: &'a str,
    core: bool,
    voices: Vec<Voice>,
    question_bank_size: usize,
    default_batch_size: usize,
    dependent_qa: bool,
}

async fn list_tasks(State(state): State<Arc<AppState>>) -> Json<Value> {
    let tasks: Vec<TaskSummary> = state
        .catalog
        .iter()
        .map(|t| TaskSummary {
            name: &t.name,
            core: t.core,
            voices: [Voice::FirstPerson, Voice::SecondPerson]
                .into_iter()
                .filter(|&v| t.stage1_prompt(v).is_some())
                .collect(),
            question_bank_size: t.question_bank.len(),
            default_batch_size: t.default_batch_size.get(),
            dependent_qa: t.dependent_qa,
        })
        .collect();
    Json(json!(tasks))
}

#[derive(Deserialize)]
struct CreateSession {
    task: String,
    #[serde(default)]
    voice: Voice,
}

async fn create_session(State(state): State<Arc<AppState>>, raw: Bytes) -> ApiResult<(StatusCode, Json<Session>)> {
    let req: CreateSession = body(&raw)?;
    let task = state.catalog.resolve(&req.task)?;
    if task.stage1_prompt(req.voice).is_none() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "VoiceUnavailable",
            format!("task `{}` has no second-person prompt", task.name),
        ));
    }
    let session = Session::new(&task.name, req.voice, stage1_config(), &*state.clock);
    let saved = session.clone();
    blocking(move || Ok(state.store.save(&saved)?)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    let id = parse_id(&id)?;
    let session = blocking(move || Ok(state.store.load(id)?.session)).await?;
    Ok(Json(session))
}

async fn post_questions(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    let session = mutate(state, id, |state, current| {
        let task = state.catalog.get_task(&current.task_name)?;
        Ok(generate_questions_for(
            &*state.backend,
            task,
            &state.limits,
            current,
            &*state.clock,
        )?)
    })
    .await?;
    Ok(Json(
        json!({ "id": session.id, "stage": session.stage, "questions": session.questions }),
    ))
}

#[derive(Deserialize)]
struct AnswerItem {
    index: usize,
    text: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnswersBody {
    Wrapped { answers: Vec<AnswerItem> },
    Many(Vec<AnswerItem>),
    One(AnswerItem),
}

async fn post_answers(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Bytes,
) -> ApiResult<Json<Session>> {
    let id = parse_id(&id)?;
    let items = match body::<AnswersBody>(&raw)? {
        AnswersBody::Wrapped { answers } | AnswersBody::Many(answers) => answers,
        AnswersBody::One(item) => vec![item],
    };
    let answers: Vec<(usize, String)> = items.into_iter().map(|a| (a.index, a.text)).collect();
    let session = mutate(state, id, move |state, current| {
        Ok(fill_answers_with(current, &answers, &*state.clock)?)
    })
    .await?;
    Ok(Json(session))
}

#[derive(Deserialize, Default)]
struct OutputRequest {
    #[serde(default)]
    batch_size: Option<NonZeroUsize>,
}

async fn post_output(State(state): State<Arc<AppState>>, Path(id): Path<String>, raw: Bytes) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    let req: OutputRequest = body(&raw)?;
    let session = mutate(state, id, move |state, current| {
        let task = state.catalog.get_task(&current.task_name)?;
        let size = req.batch_size.unwrap_or(task.default_batch_size);
        Ok(generate_output_with(
            &*state.backend,
            current,
            task,
            size,
            &*state.clock,
        )?)
    })
    .await?;
    Ok(Json(json!({
        "id": session.id,
        "stage": session.stage,
        "outputs": session.outputs,
        "final_output": session.final_output,
    })))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnnotationsBody {
    Many(Vec<AnnotationRecord>),
    One(AnnotationRecord),
}

async fn post_annotations(State(state): State<Arc<AppState>>, raw: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let records = match body::<AnnotationsBody>(&raw)? {
        AnnotationsBody::Many(records) => records,
        AnnotationsBody::One(record) => vec![record],
    };
    for record in &records {
        validate_record(record, &state.catalog)?;
    }
    let count = records.len();
    blocking(move || Ok(state.store.append_annotations(&records)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "appended": count }))))
}

#[derive(Deserialize)]
struct ReportQuery {
    #[serde(default)]
    regime: Option<String>,
    #[serde(default)]
    na: Option<String>,
}

async fn get_report(State(state): State<Arc<AppState>>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let invalid = |e: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidQuery", e);
    let ka: KaRegime = q
        .regime
        .as_deref()
        .map_or(Ok(KaRegime::default()), str::parse)
        .map_err(invalid)?;
    let na: NaHandling =
        q.na.as_deref()
            .map_or(Ok(NaHandling::default()), str::parse)
            .map_err(invalid)?;
    let report = blocking(move || {
        let records = state.store.load_annotations()?;
        Ok(aggregate_report(&records, &state.catalog, Regime::new(ka, na))?)
    })
    .await?;
    Ok(Json(report).into_response())
}
