use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use crate::dataio::TrialView;
use crate::engine::{softmax, Mode, Module};
use crate::{Error, Result, Tensor};

/// Class probabilities `[N, K]` for every trial of `view`, in eval mode.
pub fn predict_proba(model: &mut dyn Module, view: &TrialView<'_>, classes: usize, batch_size: usize) -> Result<Tensor> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }
    model.set_mode(Mode::Eval);
    let mut values = Vec::with_capacity(view.len() * classes);
    let indices: Vec<usize> = (0..view.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, _) = view.gather(chunk)?;
        let logits = model.forward(&x)?;
        let [_, k] = logits.dims2("logits")?;
        if k != classes {
            return Err(Error::dim("classes", format!("model emits {k} logits, expected {classes}")));
        }
        values.extend_from_slice(softmax(&logits)?.values());
    }
    model.clear_cache();
    Tensor::new(vec![view.len(), classes], values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: usize,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub class_names: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn from_probabilities(probs: &Tensor, class_names: &[String]) -> Result<Self> {
        let [_, k] = probs.dims2("probabilities")?;
        if k != class_names.len() {
            return Err(Error::dim("classes", format!("{k} columns for {} class names", class_names.len())));
        }
        let rows = probs
            .values()
            .chunks(k.max(1))
            .enumerate()
            .map(|(id, p)| PredictionRow { id, probabilities: p.to_vec(), predicted: argmax(p) })
            .collect();
        Ok(Self { class_names: class_names.to_vec(), rows })
    }

    /// CSV with header `ID,<class names...>,Predicted Label`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["ID".to_string()];
        header.extend(self.class_names.iter().cloned());
        header.push("Predicted Label".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.id.to_string()];
            rec.extend(row.probabilities.iter().map(|p| format!("{p:.6}")));
            rec.push(self.class_names[row.predicted].clone());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Predicts every trial of `view` and writes the CSV table to `path`.
pub fn predict_export(
    model: &mut dyn Module,
    view: &TrialView<'_>,
    class_names: &[String],
    batch_size: usize,
    path: impl AsRef<Path>,
) -> Result<PredictionTable> {
    let probs = predict_proba(model, view, class_names.len(), batch_size)?;
    let table = PredictionTable::from_probabilities(&probs, class_names)?;
    table.write_csv(path)?;
    Ok(table)
}
