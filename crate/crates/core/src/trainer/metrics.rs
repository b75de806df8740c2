use serde::{Deserialize, Serialize};

use crate::dataio::TrialView;
use crate::engine::{Mode, Module};
use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub Vec<Vec<u64>>);

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self(vec![vec![0; classes]; classes])
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.0[t][p] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.0.iter().enumerate().map(|(i, row)| row[i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn kappa(&self) -> Result<f64> {
        let signed: Vec<Vec<i64>> = self.0.iter().map(|r| r.iter().map(|&v| v as i64).collect()).collect();
        cohen_kappa(&signed)
    }
}

/// Cohen's kappa of a square count matrix.
///
/// Evaluated as `(N·trace − Σ r_k c_k) / (N² − Σ r_k c_k)` in integer
/// arithmetic with a single final division, which equals
/// `(p_o − p_e) / (1 − p_e)`. Returns 0 when chance agreement is total.
pub fn cohen_kappa(confusion: &[Vec<i64>]) -> Result<f64> {
    let k = confusion.len();
    if confusion.iter().any(|r| r.len() != k) {
        return Err(Error::dim("confusion", "matrix must be square"));
    }
    if confusion.iter().flatten().any(|&v| v < 0) {
        return Err(Error::Parameter("confusion counts must be non-negative".into()));
    }
    let total: i128 = confusion.iter().flatten().map(|&v| v as i128).sum();
    if total == 0 {
        return Err(Error::EmptyData("confusion matrix is empty".into()));
    }
    let trace: i128 = (0..k).map(|i| confusion[i][i] as i128).sum();
    let chance: i128 = (0..k)
        .map(|i| {
            let row: i128 = confusion[i].iter().map(|&v| v as i128).sum();
            let col: i128 = confusion.iter().map(|r| r[i] as i128).sum();
            row * col
        })
        .sum();
    let denom = total * total - chance;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok((total * trace - chance) as f64 / denom as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
    pub loss: f64,
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode metrics over a trial view, processed in chunks of `batch_size`.
pub fn evaluate(model: &mut dyn Module, view: &TrialView<'_>, classes: usize, batch_size: usize) -> Result<Evaluation> {
    if view.is_empty() {
        return Err(Error::EmptyData("evaluation set is empty".into()));
    }
    model.set_mode(Mode::Eval);
    let mut predicted = Vec::with_capacity(view.len());
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..view.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = view.gather(chunk)?;
        let logits = model.forward(&x)?;
        let (loss, probs) = crate::engine::softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        let k = probs.shape()[1];
        predicted.extend(probs.values().chunks(k).map(argmax));
    }
    model.clear_cache();
    let truth = view.labels();
    let confusion = ConfusionMatrix::from_pairs(classes, &truth, &predicted);
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        kappa: confusion.kappa()?,
        confusion,
        loss: loss_sum / view.len() as f64,
    })
}
