//! Job table, worker pool and per-job event log.
//!
//! Every job owns an append-only event log. Events get consecutive sequence
//! numbers starting at 1, and the log is only written while holding the
//! job's lock, so readers always see a gap-free prefix. Watchers are woken
//! through a `watch` channel carrying the latest sequence number.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use eegbench::dataio::{Dataset, Scheme};
use eegbench::models::{build_model, Architecture, ModelName};
use eegbench::trainer::{EpochMetrics, Phase, ProgressEvent, TrainConfig, TrainControl};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::watch;

use crate::error::{ServiceError, ServiceResult};
use crate::pipeline::{self, Artifacts, JobRequest};

pub const JOB_FILE: &str = "job.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    FineTuning,
    Done,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Cancelled)
    }

    /// queued → running → (fine_tuning) → {done, failed, cancelled}.
    pub fn can_become(self, next: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (Queued, Running) | (Running, FineTuning) | (Running | FineTuning, Done | Failed | Cancelled)
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Last completed epoch, counted across phases.
    pub epoch: usize,
    pub total_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub dataset: String,
    pub subject: String,
    pub model: ModelName,
    pub scheme: Scheme,
    pub train: TrainConfig,
    pub arch: Option<Architecture>,
    pub state: JobState,
    pub progress: Progress,
    pub error: Option<String>,
    /// Metrics file inside the job directory, once written.
    pub metrics: Option<String>,
    pub test_accuracy: Option<f64>,
    pub artifacts: Artifacts,
    /// Unix time in seconds.
    pub created_at: f64,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    State {
        state: JobState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Epoch(EpochMetrics),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Serialize, Deserialize)]
struct StoredJob {
    record: JobRecord,
    events: Vec<JobEvent>,
}

struct JobInner {
    record: JobRecord,
    events: Vec<JobEvent>,
}

pub struct Job {
    id: String,
    dir: PathBuf,
    request: JobRequest,
    dataset: Option<Arc<Dataset>>,
    cancel: Arc<AtomicBool>,
    inner: Mutex<JobInner>,
    latest: watch::Sender<u64>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panicking worker is reported as a failed job; the data stays usable
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Job {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&self) -> JobRecord {
        lock(&self.inner).record.clone()
    }

    /// Events with `seq > after`, in order.
    pub fn events_after(&self, after: u64) -> Vec<JobEvent> {
        let inner = lock(&self.inner);
        let start = (after as usize).min(inner.events.len());
        inner.events[start..].to_vec()
    }

    pub fn is_finished(&self) -> bool {
        lock(&self.inner).record.state.is_terminal()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }

    fn push(&self, inner: &mut JobInner, body: EventBody) {
        let seq = inner.events.len() as u64 + 1;
        inner.events.push(JobEvent { seq, body });
        self.latest.send_replace(seq);
    }

    fn transition(&self, inner: &mut JobInner, state: JobState, error: Option<String>) {
        debug_assert!(inner.record.state.can_become(state), "{:?} -> {state:?}", inner.record.state);
        inner.record.state = state;
        match state {
            JobState::Running => inner.record.started_at = Some(now()),
            s if s.is_terminal() => inner.record.finished_at = Some(now()),
            _ => {}
        }
        inner.record.error.clone_from(&error);
        self.push(inner, EventBody::State { state, error });
        self.persist(inner);
    }

    fn persist(&self, inner: &JobInner) {
        let stored = StoredJob { record: inner.record.clone(), events: inner.events.clone() };
        let path = self.dir.join(JOB_FILE);
        let result = serde_json::to_vec_pretty(&stored)
            .map_err(std::io::Error::other)
            .and_then(|bytes| fs::write(&path, bytes));
        if let Err(e) = result {
            eprintln!("warning: could not persist {}: {e}", path.display());
        }
    }

    /// Waits until an event after `after` exists, the job is finished or
    /// `timeout` passes, then returns whatever is available.
    pub async fn wait_events(&self, after: u64, timeout: Duration) -> Vec<JobEvent> {
        let mut rx = self.subscribe();
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let events = self.events_after(after);
            if !events.is_empty() || self.is_finished() {
                return events;
            }
            match tokio::time::timeout_at(deadline, rx.changed()).await {
                Ok(Ok(())) => continue,
                _ => return self.events_after(after),
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManagerConfig {
    pub jobs_root: PathBuf,
    pub max_workers: usize,
}

struct Shared {
    jobs_root: PathBuf,
    jobs: RwLock<BTreeMap<String, Arc<Job>>>,
    queue: Mutex<VecDeque<Arc<Job>>>,
    wake: Condvar,
    shutdown: AtomicBool,
}

/// Owns the job table and a fixed pool of worker threads.
pub struct JobManager {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

/// Stable identity of a request: checkpoint locations are assigned by the
/// service and do not take part.
pub fn request_digest(request: &JobRequest) -> String {
    let mut canonical = request.clone();
    canonical.train.checkpoint_path = None;
    let bytes = serde_json::to_vec(&canonical).expect("job requests serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl JobManager {
    /// Loads previously stored jobs from `jobs_root` and starts the workers.
    /// Jobs that were still active when the last process stopped are marked
    /// failed.
    pub fn new(config: ManagerConfig) -> ServiceResult<Self> {
        if config.max_workers == 0 {
            return Err(ServiceError::BadRequest("max_workers must be at least 1".into()));
        }
        fs::create_dir_all(&config.jobs_root).map_err(|e| ServiceError::io(&config.jobs_root, e))?;
        let shared = Arc::new(Shared {
            jobs_root: config.jobs_root.clone(),
            jobs: RwLock::new(load_stored(&config.jobs_root)),
            queue: Mutex::new(VecDeque::new()),
            wake: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let workers = (0..config.max_workers)
            .map(|i| {
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("eegbench-worker-{i}"))
                    .spawn(move || worker_loop(&shared))
                    .expect("spawn worker thread")
            })
            .collect();
        Ok(Self { shared, workers })
    }

    pub fn jobs_root(&self) -> &Path {
        &self.shared.jobs_root
    }

    /// Validates the request against the dataset, assigns a content-derived
    /// id (`<digest prefix>-<ordinal>`) and queues the job.
    pub fn create(&self, request: JobRequest, dataset: Arc<Dataset>) -> ServiceResult<JobRecord> {
        request.validate()?;
        request.split(&dataset)?;
        let model_config = request.model_config(&dataset)?;
        build_model(&model_config, request.train.seed)?;

        let digest = request_digest(&request);
        let prefix = &digest[..12];
        let mut jobs = self.shared.jobs.write().unwrap_or_else(|p| p.into_inner());
        let ordinal = jobs.keys().filter(|k| k.starts_with(prefix)).count() + 1;
        let id = format!("{prefix}-{ordinal}");
        let dir = self.shared.jobs_root.join(&id);
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;

        let total_epochs = request.train.epochs
            + if request.scheme == Scheme::SiFt { request.train.fine_tune_epochs } else { 0 };
        let mut train = request.train.clone();
        train.checkpoint_path = None;
        let record = JobRecord {
            id: id.clone(),
            dataset: request.dataset.clone(),
            subject: request.subject.clone(),
            model: request.model,
            scheme: request.scheme,
            train,
            arch: request.arch.clone(),
            state: JobState::Queued,
            progress: Progress { epoch: 0, total_epochs },
            error: None,
            metrics: None,
            test_accuracy: None,
            artifacts: Artifacts::default(),
            created_at: now(),
            started_at: None,
            finished_at: None,
        };
        let (latest, _) = watch::channel(0);
        let job = Arc::new(Job {
            id: id.clone(),
            dir,
            request,
            dataset: Some(dataset),
            cancel: Arc::new(AtomicBool::new(false)),
            inner: Mutex::new(JobInner { record, events: Vec::new() }),
            latest,
        });
        {
            let mut inner = lock(&job.inner);
            job.push(&mut inner, EventBody::State { state: JobState::Queued, error: None });
            job.persist(&inner);
        }
        let record = job.record();
        jobs.insert(id, Arc::clone(&job));
        drop(jobs);
        lock(&self.shared.queue).push_back(job);
        self.shared.wake.notify_one();
        Ok(record)
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<Job>> {
        self.shared
            .jobs
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown job `{id}`")))
    }

    pub fn list(&self) -> Vec<JobRecord> {
        let jobs = self.shared.jobs.read().unwrap_or_else(|p| p.into_inner());
        let mut records: Vec<JobRecord> = jobs.values().map(|j| j.record()).collect();
        records.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        records
    }

    /// Requests cancellation. A running job stops at its next batch
    /// boundary; a queued job is passed through `running` to `cancelled`
    /// immediately. Finished jobs are a conflict.
    pub fn cancel(&self, id: &str) -> ServiceResult<JobRecord> {
        let job = self.get(id)?;
        let mut inner = lock(&job.inner);
        match inner.record.state {
            s if s.is_terminal() => {
                return Err(ServiceError::Conflict(format!("job `{id}` already {}", state_name(s))));
            }
            JobState::Queued => {
                job.cancel.store(true, Ordering::SeqCst);
                lock(&self.shared.queue).retain(|j| j.id != job.id);
                job.transition(&mut inner, JobState::Running, None);
                job.transition(&mut inner, JobState::Cancelled, None);
            }
            _ => job.cancel.store(true, Ordering::SeqCst),
        }
        Ok(inner.record.clone())
    }

    /// Number of jobs currently running or fine-tuning.
    pub fn active(&self) -> usize {
        let jobs = self.shared.jobs.read().unwrap_or_else(|p| p.into_inner());
        jobs.values()
            .filter(|j| matches!(j.record().state, JobState::Running | JobState::FineTuning))
            .count()
    }
}

impl Drop for JobManager {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for job in self.shared.jobs.read().unwrap_or_else(|p| p.into_inner()).values() {
            job.cancel.store(true, Ordering::SeqCst);
        }
        self.shared.wake.notify_all();
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

fn state_name(state: JobState) -> &'static str {
    match state {
        JobState::Queued => "queued",
        JobState::Running => "running",
        JobState::FineTuning => "fine_tuning",
        JobState::Done => "done",
        JobState::Failed => "failed",
        JobState::Cancelled => "cancelled",
    }
}

fn load_stored(root: &Path) -> BTreeMap<String, Arc<Job>> {
    let mut jobs = BTreeMap::new();
    let Ok(entries) = fs::read_dir(root) else { return jobs };
    for entry in entries.flatten() {
        let dir = entry.path();
        let Ok(bytes) = fs::read(dir.join(JOB_FILE)) else { continue };
        let Ok(stored) = serde_json::from_slice::<StoredJob>(&bytes) else {
            eprintln!("warning: skipping unreadable {}", dir.join(JOB_FILE).display());
            continue;
        };
        let record = stored.record;
        let request = JobRequest {
            dataset: record.dataset.clone(),
            subject: record.subject.clone(),
            model: record.model,
            scheme: record.scheme,
            train: record.train.clone(),
            arch: record.arch.clone(),
        };
        let (latest, _) = watch::channel(stored.events.len() as u64);
        let job = Arc::new(Job {
            id: record.id.clone(),
            dir,
            request,
            dataset: None,
            cancel: Arc::new(AtomicBool::new(false)),
            inner: Mutex::new(JobInner { record, events: stored.events }),
            latest,
        });
        {
            let mut inner = lock(&job.inner);
            let state = inner.record.state;
            if !state.is_terminal() {
                if state == JobState::Queued {
                    job.transition(&mut inner, JobState::Running, None);
                }
                job.transition(&mut inner, JobState::Failed, Some("interrupted by a service restart".into()));
            }
        }
        jobs.insert(job.id.clone(), job);
    }
    jobs
}

fn worker_loop(shared: &Shared) {
    loop {
        let job = {
            let mut queue = lock(&shared.queue);
            loop {
                if shared.shutdown.load(Ordering::SeqCst) {
                    return;
                }
                if let Some(job) = queue.pop_front() {
                    break job;
                }
                queue = shared.wake.wait(queue).unwrap_or_else(|p| p.into_inner());
            }
        };
        execute(&job);
    }
}

fn execute(job: &Arc<Job>) {
    {
        let mut inner = lock(&job.inner);
        if inner.record.state != JobState::Queued {
            return;
        }
        job.transition(&mut inner, JobState::Running, None);
    }
    let Some(dataset) = job.dataset.clone() else {
        let mut inner = lock(&job.inner);
        job.transition(&mut inner, JobState::Failed, Some("dataset is no longer loaded".into()));
        return;
    };

    let (tx, rx) = mpsc::channel::<ProgressEvent>();
    let forwarder = {
        let job = Arc::clone(job);
        thread::spawn(move || {
            for event in rx {
                let mut inner = lock(&job.inner);
                match event {
                    ProgressEvent::PhaseStarted { phase: Phase::FineTune } => {
                        job.transition(&mut inner, JobState::FineTuning, None);
                    }
                    ProgressEvent::PhaseStarted { .. } => {}
                    ProgressEvent::Epoch(metrics) => {
                        inner.record.progress.epoch = metrics.epoch;
                        job.push(&mut inner, EventBody::Epoch(metrics));
                    }
                }
            }
        })
    };
    let control = TrainControl { cancel: Some(Arc::clone(&job.cancel)), progress: Some(tx) };
    let outcome = catch_unwind(AssertUnwindSafe(|| pipeline::run(&job.request, &dataset, &job.dir, &control)));
    drop(control);
    let _ = forwarder.join();

    let mut inner = lock(&job.inner);
    match outcome {
        Ok(Ok(output)) => {
            inner.record.metrics = output.artifacts.metrics.clone();
            inner.record.test_accuracy = output.record.test.as_ref().map(|t| t.accuracy);
            inner.record.artifacts = output.artifacts;
            let state = if output.record.cancelled { JobState::Cancelled } else { JobState::Done };
            job.transition(&mut inner, state, None);
        }
        Ok(Err(e)) => job.transition(&mut inner, JobState::Failed, Some(e.to_string())),
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "worker panicked".into());
            job.transition(&mut inner, JobState::Failed, Some(message));
        }
    }
}
