use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use eegbench::dataio::{generate_synthetic, save_dataset, Dataset, SyntheticSpec};
use eegbench::interpret::Raster;
use eegbench_service::jobs::{EventBody, JobEvent, JobRecord, JobState};
use eegbench_service::server::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn tiny_spec() -> SyntheticSpec {
    SyntheticSpec {
        subjects: 3,
        trials_per_class: 6,
        channels: 4,
        timepoints: 64,
        fs: 64.0,
        classes: 2,
        snr: 4.0,
        subject_variability: 0.3,
    }
}

fn write_tiny(root: &Path, name: &str) {
    let sets = generate_synthetic(&tiny_spec(), 3).unwrap();
    save_dataset(&Dataset { name: name.into(), sets }, root.join(name)).unwrap();
}

struct Harness {
    _tmp: TempDir,
    state: AppState,
    app: Router,
}

fn harness(max_workers: usize) -> Harness {
    let tmp = TempDir::new().unwrap();
    write_tiny(&tmp.path().join("data"), "tiny");
    let config = ServiceConfig {
        addr: "127.0.0.1:0".into(),
        data_root: tmp.path().join("data"),
        jobs_root: tmp.path().join("jobs"),
        max_workers,
    };
    let state = AppState::new(&config).unwrap();
    Harness { app: router(state.clone()), state, _tmp: tmp }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut builder = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            builder = builder.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(builder.body(body).unwrap()).await.unwrap();
    let status = response.status();
    (status, response.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn job_body(epochs: usize, seed: u64) -> Value {
    json!({
        "dataset": "tiny",
        "subject": "1",
        "model": "sccnet",
        "scheme": "individual",
        "train": { "epochs": epochs, "batch_size": 8, "lr": 0.01, "seed": seed }
    })
}

async fn create(app: &Router, body: Value) -> JobRecord {
    let (status, value) = call_json(app, Method::POST, "/jobs", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{value}");
    serde_json::from_value(value).unwrap()
}

async fn wait_terminal(app: &Router, id: &str) -> JobRecord {
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let (status, value) = call_json(app, Method::GET, &format!("/jobs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let record: JobRecord = serde_json::from_value(value).unwrap();
        if record.state.is_terminal() {
            return record;
        }
        assert!(Instant::now() < deadline, "job {id} did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn all_events(app: &Router, id: &str) -> Vec<JobEvent> {
    let (status, value) = call_json(app, Method::GET, &format!("/jobs/{id}/events?poll=true&timeout=0"), None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_value(value).unwrap()
}

fn states(events: &[JobEvent]) -> Vec<JobState> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::State { state, .. } => Some(*state),
            EventBody::Epoch(_) => None,
        })
        .collect()
}

fn epochs(events: &[JobEvent]) -> Vec<usize> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Epoch(m) => Some(m.epoch),
            EventBody::State { .. } => None,
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn datasets_register_list_and_reject() {
    let h = harness(1);
    let (status, list) = call_json(&h.app, Method::GET, "/datasets", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["subjects"].as_array().unwrap().len(), 3);

    // a second registration of the same directory is idempotent
    let (status, again) = call_json(&h.app, Method::POST, "/datasets", Some(json!({"path": "tiny"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, list[0]);

    let (status, generated) = call_json(
        &h.app,
        Method::POST,
        "/datasets",
        Some(json!({"name": "nine", "seed": 1, "synthetic": {
            "subjects": 9, "trials_per_class": 2, "channels": 4, "timepoints": 16, "fs": 64.0, "classes": 2
        }})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{generated}");
    let subjects = generated["subjects"].as_array().unwrap();
    assert_eq!(subjects.len(), 9);
    assert!(subjects.iter().all(|s| s["sessions"].as_array().unwrap().len() == 2));

    let broken = h.state.data_root.join("broken");
    write_tiny(&h.state.data_root, "broken");
    fs::remove_file(broken.join("sub-2/ses-1/labels.bin")).unwrap();
    let (status, err) = call_json(&h.app, Method::POST, "/datasets", Some(json!({"path": "broken"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].as_str().unwrap().contains("format error"), "{err}");

    let (status, _) = call_json(&h.app, Method::POST, "/datasets", Some(json!({"path": "nowhere"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_json(&h.app, Method::POST, "/datasets", Some(json!({"bogus": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, list) = call_json(&h.app, Method::GET, "/datasets", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn models_report_counts_next_to_reference() {
    let h = harness(1);
    let (status, models) = call_json(&h.app, Method::GET, "/models", None).await;
    assert_eq!(status, StatusCode::OK);
    let counts: Vec<(String, u64, u64)> = models
        .as_array()
        .unwrap()
        .iter()
        .map(|m| {
            (
                m["name"].as_str().unwrap().to_string(),
                m["param_count"].as_u64().unwrap(),
                m["reference_param_count"].as_u64().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        counts,
        vec![
            ("eegnet".into(), 2_548, 2_548),
            ("shallowconvnet".into(), 41_284, 47_644),
            ("sccnet".into(), 9_254, 9_254),
        ]
    );
    assert_eq!(models[2]["config"]["channels"], 22);
    assert_eq!(models[2]["config"]["timepoints"], 562);

    let (status, small) = call_json(&h.app, Method::GET, "/models?channels=4&timepoints=64&classes=2&fs=64", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(small[2]["config"]["channels"], 4);
    assert!(small[2]["param_count"].as_u64().unwrap() > 0);
    // the canonical ShallowConvNet pooling does not fit 64 samples
    assert!(small[1]["param_count"].is_null());
    assert!(small[1]["error"].as_str().unwrap().contains("avg_pool"));
    let (status, _) = call(&h.app, Method::GET, "/models?classes=1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_job_requests() {
    let h = harness(1);
    let mut body = job_body(1, 0);
    body["model"] = json!("resnet");
    assert_eq!(call(&h.app, Method::POST, "/jobs", Some(body)).await.0, StatusCode::BAD_REQUEST);
    let mut body = job_body(1, 0);
    body["scheme"] = json!("transfer");
    assert_eq!(call(&h.app, Method::POST, "/jobs", Some(body)).await.0, StatusCode::BAD_REQUEST);
    let mut body = job_body(1, 0);
    body["dataset"] = json!("missing");
    assert_eq!(call(&h.app, Method::POST, "/jobs", Some(body)).await.0, StatusCode::NOT_FOUND);
    let mut body = job_body(1, 0);
    body["subject"] = json!("42");
    assert_eq!(call(&h.app, Method::POST, "/jobs", Some(body)).await.0, StatusCode::BAD_REQUEST);
    let mut body = job_body(1, 0);
    body["train"]["lr"] = json!(-1.0);
    assert_eq!(call(&h.app, Method::POST, "/jobs", Some(body)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&h.app, Method::POST, "/jobs", Some(json!({"dataset": "tiny"}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&h.app, Method::GET, "/jobs/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&h.app, Method::POST, "/jobs/nope/cancel", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn job_runs_to_done_with_artifacts() {
    let h = harness(1);
    let job = create(&h.app, job_body(6, 1)).await;
    assert_eq!(job.state, JobState::Queued);
    assert_eq!(job.progress.total_epochs, 6);
    let done = wait_terminal(&h.app, &job.id).await;
    assert_eq!(done.state, JobState::Done, "{:?}", done.error);
    assert_eq!(done.progress.epoch, 6);
    assert!(done.started_at.unwrap() <= done.finished_at.unwrap());

    let events = all_events(&h.app, &job.id).await;
    assert_eq!(states(&events), [JobState::Queued, JobState::Running, JobState::Done]);
    assert_eq!(epochs(&events), (1..=6).collect::<Vec<_>>());
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>());

    let (status, results) = call_json(&h.app, Method::GET, &format!("/jobs/{}/results", job.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(results["history"].as_array().unwrap().len(), 6);
    assert_eq!(results["test"]["accuracy"].as_f64(), done.test_accuracy);
    assert!(results["train_seconds"].is_f64());

    let (status, csv) = call(&h.app, Method::GET, &format!("/jobs/{}/predictions.csv", job.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "ID,class_0,class_1,Predicted Label");
    assert_eq!(lines.count(), 12);

    let (status, spatial) = call_json(&h.app, Method::GET, &format!("/jobs/{}/interpret/spatial?kernel=3", job.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let Raster::Topomap(grid) = serde_json::from_value(spatial).unwrap() else { panic!("not a topomap") };
    assert_eq!(grid.kernel_index, 3);
    assert_eq!(grid.electrodes.len(), 4);
    let (status, _) = call(&h.app, Method::GET, &format!("/jobs/{}/interpret/spatial?kernel=4", job.id), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, png) =
        call(&h.app, Method::GET, &format!("/jobs/{}/interpret/spatial?kernel=0&format=png", job.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");
    let (status, temporal) = call_json(&h.app, Method::GET, &format!("/jobs/{}/interpret/temporal", job.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let Raster::Spectra(image) = serde_json::from_value(temporal).unwrap() else { panic!("not spectra") };
    assert_eq!(image.rows.len(), 20);

    // a finished job cannot be cancelled
    assert_eq!(call(&h.app, Method::POST, &format!("/jobs/{}/cancel", job.id), None).await.0, StatusCode::CONFLICT);
    let (_, list) = call_json(&h.app, Method::GET, "/jobs", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn non_sccnet_jobs_have_no_kernel_images() {
    let h = harness(1);
    let mut body = job_body(2, 0);
    body["model"] = json!("eegnet");
    let job = create(&h.app, body).await;
    let done = wait_terminal(&h.app, &job.id).await;
    assert_eq!(done.state, JobState::Done, "{:?}", done.error);
    assert!(done.artifacts.interpret.is_empty());
    let (status, _) = call(&h.app, Method::GET, &format!("/jobs/{}/interpret/temporal", job.id), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn fine_tuning_state_is_reported() {
    let h = harness(1);
    let mut body = job_body(3, 0);
    body["scheme"] = json!("si_ft");
    body["train"]["fine_tune_epochs"] = json!(2);
    let job = create(&h.app, body).await;
    assert_eq!(job.progress.total_epochs, 5);
    let done = wait_terminal(&h.app, &job.id).await;
    assert_eq!(done.state, JobState::Done, "{:?}", done.error);
    let events = all_events(&h.app, &job.id).await;
    assert_eq!(
        states(&events),
        [JobState::Queued, JobState::Running, JobState::FineTuning, JobState::Done]
    );
    assert_eq!(epochs(&events), [1, 2, 3, 4, 5]);
    // the fine-tuning state precedes the first fine-tune epoch
    let ft = events.iter().position(|e| matches!(e.body, EventBody::State { state: JobState::FineTuning, .. })).unwrap();
    assert!(matches!(&events[ft - 1].body, EventBody::Epoch(m) if m.epoch == 3));
}

#[tokio::test(flavor = "multi_thread")]
async fn cancel_running_and_queued_jobs() {
    let h = harness(1);
    let running = create(&h.app, job_body(100_000, 0)).await;
    let queued = create(&h.app, job_body(100_000, 1)).await;

    // wait for the first job to complete an epoch
    let (status, value) =
        call_json(&h.app, Method::GET, &format!("/jobs/{}/events?poll=true&from=2&timeout=60", running.id), None).await;
    assert_eq!(status, StatusCode::OK);
    let first: Vec<JobEvent> = serde_json::from_value(value).unwrap();
    assert!(!epochs(&first).is_empty(), "{first:?}");
    assert_eq!(h.state.jobs.get(&queued.id).unwrap().record().state, JobState::Queued);

    let (status, record) = call_json(&h.app, Method::POST, &format!("/jobs/{}/cancel", queued.id), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(record["state"], "cancelled");
    assert_eq!(
        states(&all_events(&h.app, &queued.id).await),
        [JobState::Queued, JobState::Running, JobState::Cancelled]
    );

    let (status, _) = call(&h.app, Method::POST, &format!("/jobs/{}/cancel", running.id), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let cancelled = wait_terminal(&h.app, &running.id).await;
    assert_eq!(cancelled.state, JobState::Cancelled);
    let events = all_events(&h.app, &running.id).await;
    let done_epochs = epochs(&events);
    assert_eq!(done_epochs, (1..=done_epochs.len()).collect::<Vec<_>>());

    // partial metrics are kept, predictions are not produced
    let (status, results) = call_json(&h.app, Method::GET, &format!("/jobs/{}/results", running.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(results["cancelled"], true);
    assert_eq!(results["history"].as_array().unwrap().len(), done_epochs.len());
    assert!(results["test"].is_null());
    let (status, _) = call(&h.app, Method::GET, &format!("/jobs/{}/predictions.csv", running.id), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(call(&h.app, Method::POST, &format!("/jobs/{}/cancel", running.id), None).await.0, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn duplicate_jobs_share_a_digest_and_results() {
    let h = harness(2);
    let a = create(&h.app, job_body(8, 5)).await;
    let b = create(&h.app, job_body(8, 5)).await;
    assert_ne!(a.id, b.id);
    assert_eq!(a.id.split('-').next(), b.id.split('-').next());
    let (a, b) = (wait_terminal(&h.app, &a.id).await, wait_terminal(&h.app, &b.id).await);
    assert_eq!(a.state, JobState::Done);
    assert_eq!(b.state, JobState::Done);
    assert_eq!(a.test_accuracy, b.test_accuracy);
    let (_, ra) = call_json(&h.app, Method::GET, &format!("/jobs/{}/results", a.id), None).await;
    let (_, rb) = call_json(&h.app, Method::GET, &format!("/jobs/{}/results", b.id), None).await;
    assert_eq!(ra["history"], rb["history"]);
    assert_eq!(ra["test"], rb["test"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn at_most_max_workers_run_at_once() {
    let h = harness(1);
    let ids: Vec<String> = futures_ids(&h.app, 3).await;
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        assert!(h.state.jobs.active() <= 1);
        let records: Vec<JobRecord> = ids.iter().map(|id| h.state.jobs.get(id).unwrap().record()).collect();
        if records.iter().all(|r| r.state.is_terminal()) {
            assert!(records.iter().all(|r| r.state == JobState::Done));
            break;
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

async fn futures_ids(app: &Router, n: u64) -> Vec<String> {
    let mut ids = Vec::new();
    for seed in 0..n {
        ids.push(create(app, job_body(15, seed)).await.id);
    }
    ids
}

#[tokio::test(flavor = "multi_thread")]
async fn sse_stream_is_ordered_and_resumable() {
    let h = harness(1);
    let job = create(&h.app, job_body(5, 2)).await;
    wait_terminal(&h.app, &job.id).await;

    let response = h
        .app
        .clone()
        .oneshot(Request::get(format!("/jobs/{}/events", job.id)).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(response.headers()["content-type"], "text/event-stream");
    let text = String::from_utf8(response.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let ids: Vec<u64> = text.lines().filter_map(|l| l.strip_prefix("id: ")).map(|v| v.parse().unwrap()).collect();
    assert_eq!(ids, (1..=8).collect::<Vec<_>>());
    assert!(text.contains("event: epoch"));
    let data: Vec<JobEvent> =
        text.lines().filter_map(|l| l.strip_prefix("data: ")).map(|d| serde_json::from_str(d).unwrap()).collect();
    assert_eq!(epochs(&data), [1, 2, 3, 4, 5]);

    // reconnecting with the last id seen yields only what follows it
    let response = h
        .app
        .clone()
        .oneshot(
            Request::get(format!("/jobs/{}/events", job.id))
                .header("last-event-id", "5")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    let text = String::from_utf8(response.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let ids: Vec<u64> = text.lines().filter_map(|l| l.strip_prefix("id: ")).map(|v| v.parse().unwrap()).collect();
    assert_eq!(ids, [6, 7, 8]);
}

#[tokio::test(flavor = "multi_thread")]
async fn jobs_survive_a_restart() {
    let tmp = TempDir::new().unwrap();
    write_tiny(&tmp.path().join("data"), "tiny");
    let config = ServiceConfig {
        addr: "127.0.0.1:0".into(),
        data_root: tmp.path().join("data"),
        jobs_root: tmp.path().join("jobs"),
        max_workers: 1,
    };
    let id = {
        let state = AppState::new(&config).unwrap();
        let app = router(state.clone());
        let job = create(&app, job_body(3, 0)).await;
        wait_terminal(&app, &job.id).await;
        job.id
    };
    let state = AppState::new(&config).unwrap();
    let app = router(state);
    let (status, record) = call_json(&app, Method::GET, &format!("/jobs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["state"], "done");
    assert_eq!(epochs(&all_events(&app, &id).await), [1, 2, 3]);
    assert_eq!(call(&app, Method::GET, &format!("/jobs/{id}/predictions.csv"), None).await.0, StatusCode::OK);
    // the digest prefix continues with the next ordinal
    let again = create(&app, job_body(3, 0)).await;
    assert_eq!(again.id, format!("{}-2", id.strip_suffix("-1").unwrap()));
}
