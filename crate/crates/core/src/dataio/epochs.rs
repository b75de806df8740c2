use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Montage;
use crate::{Error, Result, Tensor};

/// Labeled trials of one subject session, `data: [trials, channels, time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    pub data: Tensor,
    pub labels: Vec<usize>,
    pub subject_id: String,
    pub session_id: String,
    pub fs: f64,
    pub class_names: Vec<String>,
    pub montage: Montage,
    pub unit: String,
}

impl EpochSet {
    pub fn trials(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn timepoints(&self) -> usize {
        self.data.shape()[2]
    }

    /// One trial as a `channels * time` slice.
    pub fn trial(&self, index: usize) -> &[f64] {
        let len = self.channels() * self.timepoints();
        &self.data.values()[index * len..][..len]
    }
}

/// `meta.json` of an epoch directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMeta {
    pub subject_id: String,
    pub session_id: String,
    pub fs: f64,
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub channel_positions: Vec<[f64; 2]>,
    pub trials: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub unit: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub errors: Vec<String>,
    pub trials: usize,
    pub channels: usize,
    pub timepoints: usize,
}

/// Checks every invariant of an in-memory set.
pub fn validate_epochset(set: &EpochSet) -> ValidationReport {
    let mut errors = Vec::new();
    if set.data.rank() != 3 {
        errors.push(format!("data must be [trials, channels, time], got {:?}", set.data.shape()));
    } else {
        if set.labels.len() != set.trials() {
            errors.push(format!("{} labels for {} trials", set.labels.len(), set.trials()));
        }
        if set.montage.len() != set.channels() {
            errors.push(format!("montage has {} channels, data has {}", set.montage.len(), set.channels()));
        }
    }
    if let Some(bad) = set.labels.iter().find(|&&l| l >= set.class_names.len()) {
        errors.push(format!("label {bad} out of range for {} classes", set.class_names.len()));
    }
    if let Err(e) = set.montage.validate() {
        errors.push(e.to_string());
    }
    if !(set.fs > 0.0 && set.fs.is_finite()) {
        errors.push(format!("sampling rate {} is not positive", set.fs));
    }
    if let Some(i) = set.data.values().iter().position(|v| !v.is_finite()) {
        errors.push(format!("non-finite sample at flat index {i}"));
    }
    let shape = set.data.shape();
    ValidationReport {
        valid: errors.is_empty(),
        errors,
        trials: shape.first().copied().unwrap_or(0),
        channels: shape.get(1).copied().unwrap_or(0),
        timepoints: shape.get(2).copied().unwrap_or(0),
    }
}

/// A missing member file makes the directory malformed rather than
/// unreadable, so it is reported as a format error.
fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Format(format!("missing {}", path.display())),
        _ => Error::io(path, e),
    })
}

/// Reads `meta.json`, `data.bin` and `labels.bin` from `dir`.
pub fn load_epochset(dir: impl AsRef<Path>) -> Result<EpochSet> {
    let dir = dir.as_ref();
    let meta: EpochMeta = serde_json::from_slice(&read(&dir.join("meta.json"))?)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join("meta.json").display())))?;
    let data = read(&dir.join("data.bin"))?;
    let labels = read(&dir.join("labels.bin"))?;

    let expected = meta.trials * meta.channels * meta.timepoints;
    if data.len() % 4 != 0 || data.len() / 4 != expected {
        let per_trial_time = meta.trials * meta.timepoints;
        let implied = if per_trial_time > 0 && data.len() % 4 == 0 {
            format!(" (payload implies {} channels)", data.len() / 4 / per_trial_time)
        } else {
            String::new()
        };
        return Err(Error::Format(format!(
            "meta declares {} x {} x {} samples, data.bin holds {} bytes{implied}",
            meta.trials,
            meta.channels,
            meta.timepoints,
            data.len()
        )));
    }
    if labels.len() != meta.trials {
        return Err(Error::Format(format!(
            "meta declares {} trials, labels.bin holds {}",
            meta.trials,
            labels.len()
        )));
    }
    if meta.channel_names.len() != meta.channels || meta.channel_positions.len() != meta.channels {
        return Err(Error::Format(format!(
            "meta declares {} channels but lists {} names / {} positions",
            meta.channels,
            meta.channel_names.len(),
            meta.channel_positions.len()
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite sample at flat index {i}")));
    }
    let set = EpochSet {
        data: Tensor::new(vec![meta.trials, meta.channels, meta.timepoints], values)?,
        labels: labels.iter().map(|&l| l as usize).collect(),
        subject_id: meta.subject_id,
        session_id: meta.session_id,
        fs: meta.fs,
        class_names: meta.class_names,
        montage: Montage {
            names: meta.channel_names,
            positions: meta.channel_positions,
        },
        unit: meta.unit,
    };
    let report = validate_epochset(&set);
    if !report.valid {
        return Err(Error::Format(report.errors.join("; ")));
    }
    Ok(set)
}

pub fn save_epochset(set: &EpochSet, dir: impl AsRef<Path>) -> Result<()> {
    let report = validate_epochset(set);
    if !report.valid {
        return Err(Error::Format(report.errors.join("; ")));
    }
    if set.class_names.len() > 256 {
        return Err(Error::Format("labels are stored as single bytes; at most 256 classes".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = EpochMeta {
        subject_id: set.subject_id.clone(),
        session_id: set.session_id.clone(),
        fs: set.fs,
        class_names: set.class_names.clone(),
        channel_names: set.montage.names.clone(),
        channel_positions: set.montage.positions.clone(),
        trials: set.trials(),
        channels: set.channels(),
        timepoints: set.timepoints(),
        unit: set.unit.clone(),
    };
    let mut data = Vec::with_capacity(set.data.len() * 4);
    for v in set.data.values() {
        data.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let labels: Vec<u8> = set.labels.iter().map(|&l| l as u8).collect();
    for (name, bytes) in [
        ("meta.json", serde_json::to_vec_pretty(&meta)?),
        ("data.bin", data),
        ("labels.bin", labels),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
