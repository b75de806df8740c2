use crate::{Error, Result, Tensor};

/// Row-wise softmax of `[N, K]` logits, max-subtracted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [n, k] = logits.dims2("logits")?;
    let mut probs = Vec::with_capacity(n * k);
    for row in logits.values().chunks_exact(k.max(1)).take(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        probs.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::new(vec![n, k], probs)
}

/// Mean cross-entropy over the batch, together with the softmax
/// probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k] = logits.dims2("logits")?;
    if labels.len() != n {
        return Err(Error::dim("labels", format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyData("cross-entropy over an empty batch".into()));
    }
    let mut total = 0.0;
    for (row, &label) in logits.values().chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok((total / n as f64, softmax(logits)?))
}

/// Gradient of the mean cross-entropy with respect to the logits:
/// `(probs - onehot) / N`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [n, k] = probs.dims2("probs")?;
    let mut grad = probs.clone();
    let scale = 1.0 / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        grad.values_mut()[i * k + label] -= 1.0;
    }
    grad.values_mut().iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}
