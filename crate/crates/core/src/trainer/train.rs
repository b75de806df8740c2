use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{argmax, evaluate, Evaluation};
use crate::dataio::{holdout, make_batches, EpochSet, Scheme, SchemeSplit, TrialRef, TrialView};
use crate::engine::{adam_step, softmax_cross_entropy, softmax_cross_entropy_grad, AdamState, LayerState, Mode, Module};
use crate::models::{build_model, save_checkpoint, ModelConfig, ModelInstance, ModelName};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    /// Second-phase epochs of the `si_ft` scheme.
    pub fine_tune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 5e-4,
            epochs: 500,
            val_fraction: 0.125,
            seed: 0,
            checkpoint_path: None,
            fine_tune_epochs: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} is not positive", self.lr)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Parameter(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Main,
    FineTune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: ModelName,
    pub scheme: Scheme,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose weights were kept (best validation accuracy).
    pub best_epoch: Option<usize>,
    pub test: Option<Evaluation>,
    pub train_seconds: f64,
    pub param_count: usize,
    /// Parameters, gradients, Adam moments and the largest set of forward
    /// caches seen, in bytes.
    pub peak_memory_bytes: usize,
    pub cancelled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProgressEvent {
    PhaseStarted { phase: Phase },
    Epoch(EpochMetrics),
}

/// Cancellation flag (checked at batch boundaries) and progress channel.
#[derive(Clone, Debug, Default)]
pub struct TrainControl {
    pub cancel: Option<Arc<AtomicBool>>,
    pub progress: Option<Sender<ProgressEvent>>,
}

impl TrainControl {
    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }

    fn emit(&self, event: ProgressEvent) {
        if let Some(tx) = &self.progress {
            // a dropped receiver only means nobody is listening
            let _ = tx.send(event);
        }
    }
}

const FINE_TUNE_SALT: u64 = 0xF1E7;

fn epoch_seed(seed: u64, phase: Phase, epoch: usize) -> u64 {
    let salt = match phase {
        Phase::Main => 0xA076_1D64_78BD_642F,
        Phase::FineTune => 0xE703_7ED1_A0B4_28DB,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt ^ (epoch as u64).wrapping_mul(0x8EBC_6AF0_9C88_C6E3)
}

fn adam_update(model: &mut ModelInstance, adam: &mut AdamState) -> Result<()> {
    let mut params = Vec::new();
    let mut grads = Vec::new();
    for state in model.states_mut() {
        let LayerState { params: p, grads: g, .. } = state;
        let g: &_ = g;
        for ((_, pv), (_, gv)) in p.iter_mut().zip(g.iter()) {
            params.push(pv);
            grads.push(gv);
        }
    }
    adam_step(adam, &mut params, &grads)
}

struct PhaseRun<'a> {
    sets: &'a [EpochSet],
    train: &'a [TrialRef],
    val: &'a [TrialRef],
    epochs: usize,
    phase: Phase,
}

/// Runs one phase; returns `false` when cancelled.
fn run_phase(
    model: &mut ModelInstance,
    run: PhaseRun<'_>,
    config: &TrainConfig,
    control: &TrainControl,
    record: &mut MetricsRecord,
    peak_cache: &mut usize,
) -> Result<bool> {
    let classes = model.config.classes;
    let train_view = TrialView::new(run.sets, run.train);
    let val_view = TrialView::new(run.sets, run.val);
    let mut adam = AdamState::new(config.lr);
    let mut best: Option<(f64, usize, Vec<LayerState>)> = None;
    let mut completed = true;

    'epochs: for e in 0..run.epochs {
        let epoch = record.history.len() + 1;
        model.set_mode(Mode::Train);
        let batches = make_batches(train_view.len(), config.batch_size, true, epoch_seed(config.seed, run.phase, e))?;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in &batches {
            if control.cancelled() {
                completed = false;
                break 'epochs;
            }
            let (x, labels) = train_view.gather(batch)?;
            let logits = model.forward(&x)?;
            let (loss, probs) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grad = softmax_cross_entropy_grad(&probs, &labels)?;
            model.backward(&grad)?;
            *peak_cache = (*peak_cache).max(model.cached_len() + x.len());
            adam_update(model, &mut adam).map_err(|e| match e {
                Error::Numeric(_) => Error::Diverged { epoch },
                other => other,
            })?;
            loss_sum += loss * labels.len() as f64;
            correct += probs
                .values()
                .chunks(classes)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
        }
        model.clear_cache();
        let val = evaluate(model, &val_view, classes, config.batch_size)?;
        let metrics = EpochMetrics {
            epoch,
            phase: run.phase,
            train_loss: loss_sum / train_view.len() as f64,
            train_accuracy: correct as f64 / train_view.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        record.history.push(metrics.clone());
        control.emit(ProgressEvent::Epoch(metrics));
        if best.as_ref().is_none_or(|b| val.accuracy >= b.0) {
            best = Some((val.accuracy, epoch, model.snapshot()));
        }
    }
    if let Some((_, epoch, snapshot)) = best {
        model.restore(&snapshot);
        record.best_epoch = Some(epoch);
    }
    model.clear_cache();
    Ok(completed)
}

/// Trains a freshly built model under `split`.
///
/// Each epoch runs Adam over seeded shuffled batches, then evaluates the
/// validation set in eval mode; the weights of the best validation epoch
/// (latest on ties) are kept. For `si_ft` a second phase of
/// `fine_tune_epochs` continues from those weights on the target's first
/// session, holding out `val_fraction` of it for selection. The test set is
/// evaluated at the end unless training was cancelled.
pub fn train(
    sets: &[EpochSet],
    split: &SchemeSplit,
    model_config: &ModelConfig,
    config: &TrainConfig,
    control: &TrainControl,
) -> Result<(ModelInstance, MetricsRecord)> {
    config.validate()?;
    let first = sets.first().ok_or_else(|| Error::EmptyData("no epoch sets".into()))?;
    if first.channels() != model_config.channels || first.timepoints() != model_config.timepoints {
        return Err(Error::dim(
            "input",
            format!(
                "data is {} x {}, model expects {} x {}",
                first.channels(),
                first.timepoints(),
                model_config.channels,
                model_config.timepoints
            ),
        ));
    }
    if first.class_names.len() != model_config.classes {
        return Err(Error::dim(
            "classes",
            format!("data has {} classes, model expects {}", first.class_names.len(), model_config.classes),
        ));
    }

    let mut model = build_model(model_config, config.seed)?;
    let params = model.param_count();
    let mut record = MetricsRecord {
        model: model_config.name(),
        scheme: split.scheme,
        history: Vec::new(),
        best_epoch: None,
        test: None,
        train_seconds: 0.0,
        param_count: params,
        peak_memory_bytes: 0,
        cancelled: false,
    };
    let mut peak_cache = 0usize;
    let started = Instant::now();

    control.emit(ProgressEvent::PhaseStarted { phase: Phase::Main });
    let mut completed = run_phase(
        &mut model,
        PhaseRun {
            sets,
            train: &split.train,
            val: &split.val,
            epochs: config.epochs,
            phase: Phase::Main,
        },
        config,
        control,
        &mut record,
        &mut peak_cache,
    )?;

    if completed && split.scheme == Scheme::SiFt {
        let fine = split
            .fine_tune
            .as_deref()
            .ok_or_else(|| Error::EmptyData("si_ft split without a fine-tune set".into()))?;
        completed = fine_tune_phase(&mut model, sets, fine, config, control, &mut record, &mut peak_cache)?;
    }
    record.train_seconds = started.elapsed().as_secs_f64();
    record.cancelled = !completed;
    record.peak_memory_bytes = 8 * (4 * params + peak_cache);

    if completed && !split.test.is_empty() {
        let test_view = TrialView::new(sets, &split.test);
        record.test = Some(evaluate(&mut model, &test_view, model_config.classes, config.batch_size)?);
    }
    model.set_mode(Mode::Eval);
    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(&model, path)?;
    }
    Ok((model, record))
}

fn fine_tune_phase(
    model: &mut ModelInstance,
    sets: &[EpochSet],
    refs: &[TrialRef],
    config: &TrainConfig,
    control: &TrainControl,
    record: &mut MetricsRecord,
    peak_cache: &mut usize,
) -> Result<bool> {
    if refs.is_empty() {
        return Err(Error::EmptyData("fine-tune set is empty".into()));
    }
    let (train, val) = holdout(refs.to_vec(), sets, config.val_fraction, config.seed ^ FINE_TUNE_SALT);
    control.emit(ProgressEvent::PhaseStarted { phase: Phase::FineTune });
    run_phase(
        model,
        PhaseRun {
            sets,
            train: &train,
            val: &val,
            epochs: config.fine_tune_epochs,
            phase: Phase::FineTune,
        },
        config,
        control,
        record,
        peak_cache,
    )
}

/// Continues training an existing model (for instance one restored from an
/// SI checkpoint) on `refs` for `fine_tune_epochs`, exactly as the second
/// phase of the `si_ft` scheme does. No test evaluation is run.
pub fn fine_tune(
    mut model: ModelInstance,
    sets: &[EpochSet],
    refs: &[TrialRef],
    config: &TrainConfig,
    control: &TrainControl,
) -> Result<(ModelInstance, MetricsRecord)> {
    config.validate()?;
    let params = model.param_count();
    let mut record = MetricsRecord {
        model: model.name(),
        scheme: Scheme::SiFt,
        history: Vec::new(),
        best_epoch: None,
        test: None,
        train_seconds: 0.0,
        param_count: params,
        peak_memory_bytes: 0,
        cancelled: false,
    };
    let mut peak_cache = 0;
    let started = Instant::now();
    let completed = fine_tune_phase(&mut model, sets, refs, config, control, &mut record, &mut peak_cache)?;
    record.train_seconds = started.elapsed().as_secs_f64();
    record.cancelled = !completed;
    record.peak_memory_bytes = 8 * (4 * params + peak_cache);
    model.set_mode(Mode::Eval);
    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(&model, path)?;
    }
    Ok((model, record))
}

/// One JSON object per epoch.
pub fn write_history_jsonl(history: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for m in history {
        serde_json::to_writer(&mut out, m)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
