//! REST API over the job manager and dataset registry.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use eegbench::dataio::{generate_synthetic, load_dataset, save_dataset, Dataset, DatasetSummary, SyntheticSpec};
use eegbench::interpret::{read_sidecar, Raster};
use eegbench::models::{build_model, Architecture, ModelConfig, ModelName};
use eegbench::trainer::TrainConfig;
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::jobs::{Job, JobEvent, JobManager, JobRecord, JobState, ManagerConfig};
use crate::pipeline::{interpret_job, InterpretTarget, JobRequest, PREDICTIONS_FILE};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub addr: String,
    pub data_root: PathBuf,
    pub jobs_root: PathBuf,
    pub max_workers: usize,
}

impl ServiceConfig {
    /// Reads `EEGBENCH_ADDR`, `EEGBENCH_DATA_ROOT`, `EEGBENCH_JOBS_ROOT` and
    /// `EEGBENCH_MAX_WORKERS`, falling back to `127.0.0.1:8080`, `data`,
    /// `jobs` and 1.
    pub fn from_env() -> ServiceResult<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let max_workers = match var("EEGBENCH_MAX_WORKERS") {
            Some(v) => v
                .parse()
                .map_err(|_| ServiceError::BadRequest(format!("EEGBENCH_MAX_WORKERS=`{v}` is not an integer")))?,
            None => 1,
        };
        Ok(Self {
            addr: var("EEGBENCH_ADDR").unwrap_or_else(|| DEFAULT_ADDR.into()),
            data_root: var("EEGBENCH_DATA_ROOT").unwrap_or_else(|| "data".into()).into(),
            jobs_root: var("EEGBENCH_JOBS_ROOT").unwrap_or_else(|| "jobs".into()).into(),
            max_workers,
        })
    }
}

struct RegisteredDataset {
    path: PathBuf,
    summary: DatasetSummary,
    dataset: Arc<Dataset>,
}

/// Loaded datasets by name.
#[derive(Default)]
pub struct DatasetRegistry {
    entries: RwLock<BTreeMap<String, RegisteredDataset>>,
}

impl DatasetRegistry {
    /// Loads and validates the registry at `path`. Registering the same
    /// path twice returns the stored summary.
    pub fn register(&self, path: &Path) -> ServiceResult<DatasetSummary> {
        let canonical = fs::canonicalize(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ServiceError::NotFound(format!("no dataset at {}", path.display()))
            } else {
                ServiceError::io(path, e)
            }
        })?;
        if let Some(existing) = self.read().values().find(|d| d.path == canonical) {
            return Ok(existing.summary.clone());
        }
        let dataset = load_dataset(&canonical)?;
        if dataset.sets.is_empty() {
            return Err(eegbench::Error::EmptyData(format!("dataset `{}` lists no sessions", dataset.name)).into());
        }
        let summary = dataset.summary();
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = entries.get(&summary.name) {
            if existing.path == canonical {
                return Ok(existing.summary.clone());
            }
            return Err(ServiceError::Conflict(format!(
                "a dataset named `{}` is already registered from {}",
                summary.name,
                existing.path.display()
            )));
        }
        entries.insert(
            summary.name.clone(),
            RegisteredDataset { path: canonical, summary: summary.clone(), dataset: Arc::new(dataset) },
        );
        Ok(summary)
    }

    pub fn get(&self, name: &str) -> ServiceResult<Arc<Dataset>> {
        self.read()
            .get(name)
            .map(|d| Arc::clone(&d.dataset))
            .ok_or_else(|| ServiceError::NotFound(format!("unknown dataset `{name}`")))
    }

    pub fn summaries(&self) -> Vec<DatasetSummary> {
        self.read().values().map(|d| d.summary.clone()).collect()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<String, RegisteredDataset>> {
        self.entries.read().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Clone)]
pub struct AppState {
    pub jobs: Arc<JobManager>,
    pub datasets: Arc<DatasetRegistry>,
    pub data_root: PathBuf,
}

impl AppState {
    /// Builds the state and registers every `data_root/*/dataset.toml`.
    pub fn new(config: &ServiceConfig) -> ServiceResult<Self> {
        fs::create_dir_all(&config.data_root).map_err(|e| ServiceError::io(&config.data_root, e))?;
        let datasets = Arc::new(DatasetRegistry::default());
        let mut dirs: Vec<PathBuf> = fs::read_dir(&config.data_root)
            .map_err(|e| ServiceError::io(&config.data_root, e))?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.join(eegbench::dataio::REGISTRY_FILE).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            if let Err(e) = datasets.register(&dir) {
                eprintln!("warning: skipping dataset {}: {e}", dir.display());
            }
        }
        let jobs = JobManager::new(ManagerConfig { jobs_root: config.jobs_root.clone(), max_workers: config.max_workers })?;
        Ok(Self { jobs: Arc::new(jobs), datasets, data_root: config.data_root.clone() })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets).post(register_dataset))
        .route("/models", get(list_models))
        .route("/jobs", get(list_jobs).post(create_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/events", get(job_events))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/jobs/{id}/results", get(job_results))
        .route("/jobs/{id}/predictions.csv", get(job_predictions))
        .route("/jobs/{id}/interpret/spatial", get(interpret_spatial))
        .route("/jobs/{id}/interpret/temporal", get(interpret_temporal))
        .with_state(state)
}

/// Binds `config.addr` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> ServiceResult<()> {
    let state = AppState::new(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.addr)
        .await
        .map_err(|e| ServiceError::io(&config.addr, e))?;
    eprintln!("eegbench service listening on http://{}", config.addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::io(&config.addr, e))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> ServiceResult<T> {
    body.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServiceResult<T> + Send + 'static) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::io("<blocking task>", std::io::Error::other(e.to_string())))?
}

async fn list_datasets(State(state): State<AppState>) -> Json<Vec<DatasetSummary>> {
    Json(state.datasets.summaries())
}

/// `{"path": ...}` registers an existing directory (relative paths resolve
/// against the data root); `{"name": ..., "synthetic": {...}, "seed": n}`
/// generates one under the data root first.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum DatasetRequest {
    Path { path: PathBuf },
    Synthetic { name: String, synthetic: SyntheticSpec, #[serde(default)] seed: u64 },
}

async fn register_dataset(
    State(state): State<AppState>,
    body: Result<Json<DatasetRequest>, JsonRejection>,
) -> ServiceResult<Json<DatasetSummary>> {
    let request = json_body(body)?;
    let summary = blocking(move || match request {
        DatasetRequest::Path { path } => state.datasets.register(&state.data_root.join(path)),
        DatasetRequest::Synthetic { name, synthetic, seed } => {
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(ServiceError::BadRequest(format!("`{name}` is not a plain directory name")));
            }
            let dir = state.data_root.join(&name);
            if !dir.join(eegbench::dataio::REGISTRY_FILE).exists() {
                let sets = generate_synthetic(&synthetic, seed)?;
                save_dataset(&Dataset { name, sets }, &dir)?;
            }
            state.datasets.register(&dir)
        }
    })
    .await?;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
pub struct ModelQuery {
    pub channels: Option<usize>,
    pub timepoints: Option<usize>,
    pub classes: Option<usize>,
    pub fs: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: ModelName,
    pub config: ModelConfig,
    /// `None` when the architecture does not fit the queried input size.
    pub param_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Count reported for the original implementation at 22 channels and
    /// four classes, shown for comparison.
    pub reference_param_count: usize,
}

/// Built-in models at the canonical input size (or the one queried).
pub fn model_infos(query: &ModelQuery) -> ServiceResult<Vec<ModelInfo>> {
    ModelName::ALL
        .iter()
        .map(|&name| {
            let canonical = ModelConfig::canonical(name);
            let config = ModelConfig {
                channels: query.channels.unwrap_or(canonical.channels),
                timepoints: query.timepoints.unwrap_or(canonical.timepoints),
                classes: query.classes.unwrap_or(canonical.classes),
                fs: query.fs.unwrap_or(canonical.fs),
                arch: Architecture::canonical(name),
            };
            config.validate()?;
            let (param_count, error) = match build_model(&config, 0) {
                Ok(model) => (Some(model.param_count()), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(ModelInfo { name, config, param_count, error, reference_param_count: name.reference_param_count() })
        })
        .collect()
}

async fn list_models(Query(query): Query<ModelQuery>) -> ServiceResult<Json<Vec<ModelInfo>>> {
    Ok(Json(blocking(move || model_infos(&query)).await?))
}

/// Job submission body. Names are plain strings so unknown ones map to 400
/// rather than a deserialisation failure.
#[derive(Debug, Deserialize)]
pub struct CreateJob {
    pub dataset: String,
    pub subject: String,
    pub model: String,
    pub scheme: String,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: Option<Architecture>,
}

async fn create_job(
    State(state): State<AppState>,
    body: Result<Json<CreateJob>, JsonRejection>,
) -> ServiceResult<(StatusCode, Json<JobRecord>)> {
    let body = json_body(body)?;
    let model: ModelName = body.model.parse().map_err(|e: eegbench::Error| ServiceError::BadRequest(e.to_string()))?;
    let scheme = body.scheme.parse().map_err(|e: eegbench::Error| ServiceError::BadRequest(e.to_string()))?;
    let dataset = state.datasets.get(&body.dataset)?;
    let request = JobRequest {
        dataset: body.dataset,
        subject: body.subject,
        model,
        scheme,
        train: body.train,
        arch: body.arch,
    };
    let record = blocking(move || {
        state.jobs.create(request, dataset).map_err(|e| match e {
            // an unknown target subject is a property of the request
            ServiceError::Core(eegbench::Error::Lookup(m)) => ServiceError::BadRequest(m),
            other => other,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobRecord>> {
    Json(state.jobs.list())
}

async fn get_job(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Json<JobRecord>> {
    Ok(Json(state.jobs.get(&id)?.record()))
}

async fn cancel_job(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ServiceResult<(StatusCode, Json<JobRecord>)> {
    Ok((StatusCode::ACCEPTED, Json(state.jobs.cancel(&id)?)))
}

#[derive(Debug, Default, Deserialize)]
pub struct EventQuery {
    /// Resume after this sequence number.
    pub from: Option<u64>,
    /// Answer with a JSON array (long poll) instead of a push stream.
    #[serde(default)]
    pub poll: bool,
    /// Long-poll wait in seconds, at most 60.
    pub timeout: Option<f64>,
}

/// Ordered event stream. Each SSE message carries the event's sequence
/// number as its id, so `Last-Event-ID` (or `?from=`) resumes exactly after
/// the last event received. The stream ends after the terminal state event.
async fn job_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<EventQuery>,
    headers: HeaderMap,
) -> ServiceResult<Response> {
    let job = state.jobs.get(&id)?;
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let from = query.from.or(last_event_id).unwrap_or(0);
    if query.poll {
        let wait = Duration::from_secs_f64(query.timeout.unwrap_or(25.0).clamp(0.0, 60.0));
        return Ok(Json(job.wait_events(from, wait).await).into_response());
    }
    Ok(Sse::new(event_stream(job, from)).keep_alive(KeepAlive::default()).into_response())
}

fn sse_event(event: &JobEvent) -> Event {
    let kind = match event.body {
        crate::jobs::EventBody::State { .. } => "state",
        crate::jobs::EventBody::Epoch(_) => "epoch",
    };
    Event::default()
        .id(event.seq.to_string())
        .event(kind)
        .json_data(event)
        .expect("job events serialize")
}

/// Events after `from`, then live ones until the job finishes.
pub fn event_stream(job: Arc<Job>, from: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = job.subscribe();
    stream::unfold((job, rx, from, false), |(job, mut rx, cursor, finished)| async move {
        if finished {
            return None;
        }
        loop {
            // read the finished flag first: a job that is finished now has
            // already logged its terminal event
            let done = job.is_finished();
            let events = job.events_after(cursor);
            if !events.is_empty() || done {
                let next = events.last().map_or(cursor, |e| e.seq);
                let out: Vec<_> = events.iter().map(|e| Ok(sse_event(e))).collect();
                return Some((stream::iter(out), (job, rx, next, done)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}

fn finished_job(state: &AppState, id: &str, allow_cancelled: bool) -> ServiceResult<Arc<Job>> {
    let job = state.jobs.get(id)?;
    match job.record().state {
        JobState::Done => Ok(job),
        JobState::Cancelled if allow_cancelled => Ok(job),
        other => Err(ServiceError::Conflict(format!("job `{id}` is {other:?}, results are not available"))),
    }
}

async fn job_results(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Response> {
    let job = finished_job(&state, &id, true)?;
    let record = job.record();
    let Some(file) = record.metrics else {
        return Err(ServiceError::NotFound(format!("job `{id}` wrote no metrics")));
    };
    let path = job.dir().join(file);
    let bytes = fs::read(&path).map_err(|e| ServiceError::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn job_predictions(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ServiceResult<Response> {
    let job = finished_job(&state, &id, false)?;
    let path = job.dir().join(PREDICTIONS_FILE);
    let bytes = fs::read(&path).map_err(|e| ServiceError::io(&path, e))?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}-predictions.csv\"")),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct InterpretQuery {
    #[serde(default)]
    pub kernel: usize,
    /// `json` (default, the sidecar matrix) or `png`.
    pub format: Option<String>,
}

async fn interpret(state: AppState, id: String, target: InterpretTarget, format: Option<String>) -> ServiceResult<Response> {
    let png = match format.as_deref() {
        None | Some("json") => false,
        Some("png") => true,
        Some(other) => return Err(ServiceError::BadRequest(format!("unknown format `{other}`"))),
    };
    let job = finished_job(&state, &id, false)?;
    let dir = job.dir().to_path_buf();
    let (path, raster) = blocking(move || {
        let name = match target {
            InterpretTarget::Spatial(k) => format!("spatial_{k}.png"),
            InterpretTarget::Temporal => "temporal.png".into(),
        };
        let cached = dir.join(crate::pipeline::INTERPRET_DIR).join(name);
        match read_sidecar(cached.with_extension("json")) {
            Ok(raster) if cached.exists() => Ok((cached, raster)),
            _ => interpret_job(&dir, target),
        }
    })
    .await?;
    if png {
        let bytes = fs::read(&path).map_err(|e| ServiceError::io(&path, e))?;
        return Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response());
    }
    Ok(Json::<Raster>(raster).into_response())
}

async fn interpret_spatial(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<InterpretQuery>,
) -> ServiceResult<Response> {
    interpret(state, id, InterpretTarget::Spatial(query.kernel), query.format).await
}

async fn interpret_temporal(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<InterpretQuery>,
) -> ServiceResult<Response> {
    interpret(state, id, InterpretTarget::Temporal, query.format).await
}
