//! The job pipeline shared by the CLI and the HTTP workers:
//! split, train, evaluate, export predictions, render interpretations.

use std::fs;
use std::path::{Path, PathBuf};

use eegbench::dataio::{split_scheme, Dataset, Montage, Scheme, SchemeSplit, TrialView};
use eegbench::interpret::{
    render_raster, spatial_topomap, temporal_spectra, Raster, DEFAULT_RESOLUTION,
};
use eegbench::models::{load_checkpoint, Architecture, ModelConfig, ModelName};
use eegbench::trainer::{predict_export, train, write_history_jsonl, MetricsRecord, TrainConfig, TrainControl};
use eegbench::Error;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MONTAGE_FILE: &str = "montage.json";
pub const INTERPRET_DIR: &str = "interpret";

/// What to train: everything a job needs besides the data itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub dataset: String,
    pub subject: String,
    pub model: ModelName,
    pub scheme: Scheme,
    #[serde(default)]
    pub train: TrainConfig,
    /// Overrides the canonical hyperparameters of `model`.
    #[serde(default)]
    pub arch: Option<Architecture>,
}

impl JobRequest {
    pub fn validate(&self) -> ServiceResult<()> {
        self.train.validate()?;
        if let Some(arch) = &self.arch {
            if arch.name() != self.model {
                return Err(ServiceError::BadRequest(format!(
                    "architecture override is for {}, request names {}",
                    arch.name(),
                    self.model
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &Dataset) -> ServiceResult<ModelConfig> {
        let first = dataset
            .sets
            .first()
            .ok_or_else(|| Error::EmptyData(format!("dataset `{}` has no sessions", dataset.name)))?;
        let mut config = ModelConfig::new(
            self.model,
            first.channels(),
            first.timepoints(),
            first.class_names.len(),
            first.fs,
        );
        if let Some(arch) = &self.arch {
            config.arch = arch.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn split(&self, dataset: &Dataset) -> ServiceResult<SchemeSplit> {
        Ok(split_scheme(
            &dataset.sets,
            self.scheme,
            &self.subject,
            self.train.val_fraction,
            self.train.seed,
        )?)
    }
}

/// File names inside a job directory; `None` until written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: Option<String>,
    pub history: Option<String>,
    pub metrics: Option<String>,
    pub predictions: Option<String>,
    pub interpret: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub record: MetricsRecord,
    pub artifacts: Artifacts,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> ServiceResult<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    fs::write(path, bytes).map_err(|e| ServiceError::io(path, e))
}

/// Runs the whole pipeline for `request` on `dataset`, writing artifacts to
/// `job_dir`. A cancelled run keeps its checkpoint, history and metrics but
/// skips export and interpretation.
pub fn run(
    request: &JobRequest,
    dataset: &Dataset,
    job_dir: &Path,
    control: &TrainControl,
) -> ServiceResult<PipelineOutput> {
    request.validate()?;
    fs::create_dir_all(job_dir).map_err(|e| ServiceError::io(job_dir, e))?;
    let split = request.split(dataset)?;
    let model_config = request.model_config(dataset)?;
    let config = TrainConfig { checkpoint_path: Some(job_dir.join(CHECKPOINT_DIR)), ..request.train.clone() };

    let (mut model, record) = train(&dataset.sets, &split, &model_config, &config, control)?;
    let mut artifacts = Artifacts { checkpoint: Some(CHECKPOINT_DIR.into()), ..Artifacts::default() };

    write_history_jsonl(&record.history, job_dir.join(HISTORY_FILE))?;
    artifacts.history = Some(HISTORY_FILE.into());
    write_json(&job_dir.join(METRICS_FILE), &record)?;
    artifacts.metrics = Some(METRICS_FILE.into());
    write_json(&job_dir.join(MONTAGE_FILE), &dataset.sets[0].montage)?;

    if record.cancelled {
        return Ok(PipelineOutput { record, artifacts });
    }

    let view = TrialView::new(&dataset.sets, &split.test);
    let class_names = &dataset.sets[0].class_names;
    predict_export(&mut model, &view, class_names, config.batch_size, job_dir.join(PREDICTIONS_FILE))?;
    artifacts.predictions = Some(PREDICTIONS_FILE.into());

    if model.name() == ModelName::Sccnet {
        let montage = &dataset.sets[0].montage;
        let kernels = model.spatial_kernels()?.shape()[0];
        for k in 0..kernels {
            artifacts.interpret.push(render_spatial(&model, montage, k, job_dir)?);
        }
        artifacts.interpret.push(render_temporal(&model, dataset.sets[0].fs, job_dir)?);
    }
    Ok(PipelineOutput { record, artifacts })
}

fn interpret_dir(job_dir: &Path) -> ServiceResult<PathBuf> {
    let dir = job_dir.join(INTERPRET_DIR);
    fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
    Ok(dir)
}

fn render_spatial(
    model: &eegbench::models::ModelInstance,
    montage: &Montage,
    kernel: usize,
    job_dir: &Path,
) -> ServiceResult<String> {
    let grid = spatial_topomap(model, kernel, montage, DEFAULT_RESOLUTION)?;
    let name = format!("spatial_{kernel}.png");
    let raster = Raster::Topomap(grid);
    render_raster(&raster, raster.default_colormap(), interpret_dir(job_dir)?.join(&name))?;
    Ok(format!("{INTERPRET_DIR}/{name}"))
}

fn render_temporal(model: &eegbench::models::ModelInstance, fs: f64, job_dir: &Path) -> ServiceResult<String> {
    let raster = Raster::Spectra(temporal_spectra(model, fs, false)?);
    let name = "temporal.png";
    render_raster(&raster, raster.default_colormap(), interpret_dir(job_dir)?.join(name))?;
    Ok(format!("{INTERPRET_DIR}/{name}"))
}

/// Which interpretation to (re)compute from a finished job's checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpretTarget {
    Spatial(usize),
    Temporal,
}

/// Renders one interpretation from the checkpoint in `job_dir` and returns
/// the raster's path and its matrix.
pub fn interpret_job(job_dir: &Path, target: InterpretTarget) -> ServiceResult<(PathBuf, Raster)> {
    let checkpoint = job_dir.join(CHECKPOINT_DIR);
    if !checkpoint.exists() {
        return Err(ServiceError::NotFound(format!("no checkpoint in {}", job_dir.display())));
    }
    let model = load_checkpoint(&checkpoint)?;
    let dir = interpret_dir(job_dir)?;
    let (path, raster) = match target {
        InterpretTarget::Spatial(k) => {
            let montage_path = job_dir.join(MONTAGE_FILE);
            let montage: Montage = match fs::read(&montage_path) {
                Ok(bytes) => serde_json::from_slice(&bytes).map_err(Error::from)?,
                Err(_) => Montage::default_for(model.config.channels),
            };
            let raster = Raster::Topomap(spatial_topomap(&model, k, &montage, DEFAULT_RESOLUTION)?);
            (dir.join(format!("spatial_{k}.png")), raster)
        }
        InterpretTarget::Temporal => {
            let raster = Raster::Spectra(temporal_spectra(&model, model.config.fs, false)?);
            (dir.join("temporal.png"), raster)
        }
    };
    render_raster(&raster, raster.default_colormap(), &path)?;
    Ok((path, raster))
}
