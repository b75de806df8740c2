//! `dataset.toml`: a named list of subject/session epoch directories.
//!
//! ```toml
//! name = "synthetic"
//!
//! [[sessions]]
//! subject = "1"
//! session = "1"
//! path = "sub-1/ses-1"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_epochset, save_epochset, EpochSet};
use crate::{Error, Result};

pub const REGISTRY_FILE: &str = "dataset.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub subject: String,
    pub session: String,
    /// Relative to the registry file.
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryFile {
    pub name: String,
    pub sessions: Vec<RegistryEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub sets: Vec<EpochSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub sessions: Vec<String>,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub subjects: Vec<SubjectSummary>,
    pub sessions: usize,
    pub trials: usize,
    pub channels: usize,
    pub timepoints: usize,
    pub fs: f64,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn summary(&self) -> DatasetSummary {
        let mut subjects: BTreeMap<&str, SubjectSummary> = BTreeMap::new();
        for set in &self.sets {
            let entry = subjects.entry(&set.subject_id).or_insert_with(|| SubjectSummary {
                subject: set.subject_id.clone(),
                sessions: Vec::new(),
                trials: 0,
            });
            entry.sessions.push(set.session_id.clone());
            entry.trials += set.trials();
        }
        let first = self.sets.first();
        DatasetSummary {
            name: self.name.clone(),
            subjects: subjects.into_values().collect(),
            sessions: self.sets.len(),
            trials: self.sets.iter().map(EpochSet::trials).sum(),
            channels: first.map_or(0, EpochSet::channels),
            timepoints: first.map_or(0, EpochSet::timepoints),
            fs: first.map_or(0.0, |s| s.fs),
            class_names: first.map(|s| s.class_names.clone()).unwrap_or_default(),
        }
    }
}

fn registry_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(REGISTRY_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a registry (the `dataset.toml` file or its directory) and every
/// epoch set it lists.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = registry_path(path.as_ref());
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let registry: RegistryFile =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
    let root = file.parent().unwrap_or(Path::new("."));
    let mut sets = Vec::with_capacity(registry.sessions.len());
    for entry in &registry.sessions {
        let set = load_epochset(root.join(&entry.path))?;
        if set.subject_id != entry.subject || set.session_id != entry.session {
            return Err(Error::Format(format!(
                "{} holds subject {} session {}, registry says {} / {}",
                entry.path.display(),
                set.subject_id,
                set.session_id,
                entry.subject,
                entry.session
            )));
        }
        sets.push(set);
    }
    Ok(Dataset {
        name: registry.name,
        sets,
    })
}

/// Writes every set under `dir/sub-<s>/ses-<k>` and a `dataset.toml`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut sessions = Vec::new();
    for set in &dataset.sets {
        let rel = PathBuf::from(format!("sub-{}", set.subject_id)).join(format!("ses-{}", set.session_id));
        save_epochset(set, dir.join(&rel))?;
        sessions.push(RegistryEntry {
            subject: set.subject_id.clone(),
            session: set.session_id.clone(),
            path: rel,
        });
    }
    let registry = RegistryFile {
        name: dataset.name.clone(),
        sessions,
    };
    let file = dir.join(REGISTRY_FILE);
    let text = toml::to_string_pretty(&registry).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
    Ok(file)
}

/// Validates a registry or a single epoch directory. Returns the summary of
/// what was loaded.
pub fn validate_dataset_dir(path: impl AsRef<Path>) -> Result<DatasetSummary> {
    let path = path.as_ref();
    if path.is_dir() && path.join("meta.json").exists() {
        let set = load_epochset(path)?;
        return Ok(Dataset {
            name: path.display().to_string(),
            sets: vec![set],
        }
        .summary());
    }
    Ok(load_dataset(path)?.summary())
}
