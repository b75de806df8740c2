//! Epoch ingestion, montages, training-scheme splits, batching and a
//! synthetic EEG generator.

mod batch;
mod epochs;
mod montage;
mod registry;
mod split;
mod synthetic;

pub use batch::{make_batches, TrialView};
pub use epochs::{load_epochset, save_epochset, validate_epochset, EpochMeta, EpochSet, ValidationReport};
pub use montage::Montage;
pub use registry::{
    load_dataset, save_dataset, validate_dataset_dir, Dataset, DatasetSummary, RegistryEntry, RegistryFile, SubjectSummary,
    REGISTRY_FILE,
};
pub(crate) use split::holdout;
pub use split::{split_scheme, Scheme, SchemeSplit, TrialRef};
pub use synthetic::{generate_synthetic, SyntheticSpec};
