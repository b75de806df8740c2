use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use eegbench::dataio::{generate_synthetic, split_scheme, EpochSet, Scheme, SyntheticSpec, TrialView};
use eegbench::engine::Module;
use eegbench::models::{build_model, load_checkpoint, ModelConfig, ModelName};
use eegbench::trainer::{
    evaluate, fine_tune, train, write_history_jsonl, EpochMetrics, Phase, ProgressEvent, TrainConfig, TrainControl,
};
use eegbench::Error;

fn spec(snr: f64) -> SyntheticSpec {
    SyntheticSpec {
        subjects: 3,
        trials_per_class: 10,
        channels: 4,
        timepoints: 128,
        fs: 64.0,
        snr,
        ..SyntheticSpec::default()
    }
}

fn data(snr: f64) -> Vec<EpochSet> {
    generate_synthetic(&spec(snr), 1).unwrap()
}

fn model_config(name: ModelName) -> ModelConfig {
    let s = spec(1.0);
    ModelConfig::new(name, s.channels, s.timepoints, s.classes, s.fs)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, lr: 5e-3, seed: 4, ..TrainConfig::default() }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let sets = data(1.0);
    let split = split_scheme(&sets, Scheme::Individual, "1", 0.125, 0).unwrap();
    let mc = model_config(ModelName::Sccnet);
    let (model, record) = train(&sets, &split, &mc, &config(0), &TrainControl::default()).unwrap();
    assert!(record.history.is_empty());
    assert_eq!(record.best_epoch, None);
    let fresh = build_model(&mc, 4).unwrap();
    for ((_, _, a), (_, _, b)) in model.named_tensors().into_iter().zip(fresh.named_tensors()) {
        assert_eq!(a, b);
    }
    let test = record.test.unwrap();
    assert_eq!(test.confusion.total(), 40);
}

#[test]
fn identical_seeds_give_identical_histories() {
    let sets = data(1.0);
    for name in ModelName::ALL {
        let split = split_scheme(&sets, Scheme::Sd, "2", 0.125, 1).unwrap();
        let mc = model_config(name);
        let (_, a) = train(&sets, &split, &mc, &config(3), &TrainControl::default()).unwrap();
        let (_, b) = train(&sets, &split, &mc, &config(3), &TrainControl::default()).unwrap();
        assert_eq!(a.history, b.history, "{name}");
        assert_eq!(a.test, b.test);
        assert_eq!(a.history.len(), 3);
        assert!(a.peak_memory_bytes > 4 * 8 * a.param_count);
    }
}

#[test]
fn si_ft_first_phase_equals_si() {
    let sets = data(1.0);
    let mc = model_config(ModelName::Sccnet);
    let si = split_scheme(&sets, Scheme::Si, "3", 0.125, 2).unwrap();
    let ft = split_scheme(&sets, Scheme::SiFt, "3", 0.125, 2).unwrap();
    let cfg = TrainConfig { fine_tune_epochs: 0, ..config(4) };
    let (m_si, r_si) = train(&sets, &si, &mc, &cfg, &TrainControl::default()).unwrap();
    let (m_ft, r_ft) = train(&sets, &ft, &mc, &cfg, &TrainControl::default()).unwrap();
    assert_eq!(r_si.history, r_ft.history);
    for ((_, _, a), (_, _, b)) in m_si.named_tensors().into_iter().zip(m_ft.named_tensors()) {
        assert_eq!(a, b);
    }

    let cfg = TrainConfig { fine_tune_epochs: 2, ..config(4) };
    let (_, r) = train(&sets, &ft, &mc, &cfg, &TrainControl::default()).unwrap();
    let phases: Vec<Phase> = r.history.iter().map(|m| m.phase).collect();
    assert_eq!(phases, [Phase::Main, Phase::Main, Phase::Main, Phase::Main, Phase::FineTune, Phase::FineTune]);
    assert_eq!(r.history.iter().map(|m| m.epoch).collect::<Vec<_>>(), (1..=6).collect::<Vec<_>>());
}

#[test]
fn checkpoint_resumes_fine_tuning_without_reinitialisation() {
    let sets = data(f64::INFINITY);
    let mc = model_config(ModelName::Sccnet);
    let split = split_scheme(&sets, Scheme::SiFt, "1", 0.125, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("si");
    let cfg = TrainConfig { checkpoint_path: Some(ckpt.clone()), fine_tune_epochs: 0, ..config(15) };
    let (_, record) = train(&sets, &split, &mc, &cfg, &TrainControl::default()).unwrap();
    assert!(record.history.last().unwrap().train_loss < 0.5);

    let fine = split.fine_tune.clone().unwrap();
    let first_loss = |model| {
        let cfg = TrainConfig { fine_tune_epochs: 1, ..config(0) };
        let (_, r) = fine_tune(model, &sets, &fine, &cfg, &TrainControl::default()).unwrap();
        r.history[0].train_loss
    };
    let resumed = first_loss(load_checkpoint(&ckpt).unwrap());
    let fresh = first_loss(build_model(&mc, 4).unwrap());
    let noop = {
        let cfg = TrainConfig { fine_tune_epochs: 1, lr: 1e-12, ..config(0) };
        let (_, r) = fine_tune(load_checkpoint(&ckpt).unwrap(), &sets, &fine, &cfg, &TrainControl::default()).unwrap();
        r.history[0].train_loss
    };
    assert!(
        (resumed - noop).abs() < 0.25 * (fresh - noop).abs(),
        "resumed {resumed}, no-op {noop}, fresh {fresh}"
    );
}

#[test]
fn cancellation_keeps_partial_history() {
    let sets = data(1.0);
    let split = split_scheme(&sets, Scheme::Sd, "1", 0.125, 0).unwrap();
    let mc = model_config(ModelName::Eegnet);
    let cancel = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let control = TrainControl { cancel: Some(cancel.clone()), progress: Some(tx) };
    let watcher = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for event in rx {
            if let ProgressEvent::Epoch(m) = &event {
                if m.epoch == 2 {
                    cancel.store(true, Ordering::SeqCst);
                }
            }
            seen.push(event);
        }
        seen
    });
    let (_, record) = train(&sets, &split, &mc, &config(50), &control).unwrap();
    drop(control);
    let events = watcher.join().unwrap();
    assert!(record.cancelled);
    assert!(record.test.is_none());
    assert!(record.history.len() >= 2 && record.history.len() < 50);
    assert_eq!(events[0], ProgressEvent::PhaseStarted { phase: Phase::Main });
    let epochs: Vec<&EpochMetrics> = events
        .iter()
        .filter_map(|e| match e {
            ProgressEvent::Epoch(m) => Some(m),
            _ => None,
        })
        .collect();
    assert_eq!(epochs.len(), record.history.len());
    assert!(epochs.iter().enumerate().all(|(i, m)| m.epoch == i + 1));
}

#[test]
fn non_finite_loss_diverges_with_epoch() {
    let mut sets = data(1.0);
    for set in &mut sets {
        // overflows inside the first convolution
        set.data.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { f64::MAX } else { -f64::MAX });
    }
    let split = split_scheme(&sets, Scheme::Individual, "1", 0.125, 0).unwrap();
    let err = train(&sets, &split, &model_config(ModelName::Sccnet), &config(3), &TrainControl::default()).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1 }), "{err:?}");
}

#[test]
fn mismatched_model_dimensions_are_rejected() {
    let sets = data(1.0);
    let split = split_scheme(&sets, Scheme::Individual, "1", 0.125, 0).unwrap();
    let mc = ModelConfig::new(ModelName::Sccnet, 5, 128, 4, 64.0);
    assert!(matches!(
        train(&sets, &split, &mc, &config(1), &TrainControl::default()),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn noiseless_loss_decreases_in_five_epoch_blocks() {
    let sets = data(f64::INFINITY);
    let split = split_scheme(&sets, Scheme::Individual, "1", 0.125, 0).unwrap();
    let cfg = TrainConfig { lr: 5e-4, ..config(40) };
    let (_, record) = train(&sets, &split, &model_config(ModelName::Sccnet), &cfg, &TrainControl::default()).unwrap();
    let blocks: Vec<f64> = record.history[5..]
        .chunks(5)
        .map(|c| c.iter().map(|m| m.train_loss).sum::<f64>() / c.len() as f64)
        .collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "block means {blocks:?}");
    }
}

#[test]
fn evaluation_confusion_sums_to_test_size() {
    let sets = data(1.0);
    let split = split_scheme(&sets, Scheme::Individual, "2", 0.125, 0).unwrap();
    let mc = model_config(ModelName::Sccnet);
    let (mut model, record) = train(&sets, &split, &mc, &config(2), &TrainControl::default()).unwrap();
    let test = record.test.unwrap();
    assert_eq!(test.confusion.total(), split.test.len() as u64);
    let again = evaluate(&mut model, &TrialView::new(&sets, &split.test), 4, 7).unwrap();
    assert_eq!(again.confusion, test.confusion);
    assert!(matches!(evaluate(&mut model, &TrialView::new(&sets, &[]), 4, 7), Err(Error::EmptyData(_))));
    model.clear_cache();
}

#[test]
fn history_jsonl_has_one_line_per_epoch() {
    let sets = data(1.0);
    let split = split_scheme(&sets, Scheme::Individual, "1", 0.125, 0).unwrap();
    let (_, record) = train(&sets, &split, &model_config(ModelName::Sccnet), &config(3), &TrainControl::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.jsonl");
    write_history_jsonl(&record.history, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed: Vec<EpochMetrics> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, record.history);
}
