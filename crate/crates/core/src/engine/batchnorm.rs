use super::{LayerState, Mode, Module};
use crate::{Error, Result, Tensor};

/// What the backward pass needs from a batch-norm forward.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
}

fn channel_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::dim("input", format!("batch norm expects [N,C,H,W], got {shape:?}"))),
    }
}

/// Per-channel batch normalization over `[N, C, H, W]`.
///
/// In train mode the batch statistics normalize the input and the running
/// buffers are updated with `momentum` (running variance uses the unbiased
/// estimate). In eval mode the running buffers are used and left untouched.
pub fn batch_norm(input: &Tensor, state: &mut LayerState, momentum: f64, eps: f64) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, hw) = channel_view(input.shape())?;
    let gamma = state.param("weight").values().to_vec();
    let beta = state.param("bias").values().to_vec();
    if gamma.len() != c {
        return Err(Error::dim(
            "channels",
            format!("batch norm has {} channels, input has {c}", gamma.len()),
        ));
    }
    let count = n * hw;
    let x = input.values();
    let (mean, var) = match state.mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidBatch(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += x[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
                }
                let mu = sum / count as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += x[(b * c + ch) * hw..][..hw].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            let unbiased = count as f64 / (count as f64 - 1.0);
            let rm = state.buffers.get_mut("running_mean").expect("running_mean buffer");
            for (r, m) in rm.values_mut().iter_mut().zip(&mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            let rv = state.buffers.get_mut("running_var").expect("running_var buffer");
            for (r, v) in rv.values_mut().iter_mut().zip(&var) {
                *r = (1.0 - momentum) * *r + momentum * v * unbiased;
            }
            (mean, var)
        }
        Mode::Eval => (
            state.buffers["running_mean"].values().to_vec(),
            state.buffers["running_var"].values().to_vec(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                normalized[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BatchNormCache {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
            mode: state.mode,
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(cache: &BatchNormCache, gamma: &Tensor, grad_output: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, hw) = channel_view(grad_output.shape())?;
    if grad_output.shape() != cache.normalized.shape() {
        return Err(Error::dim("grad_output", "shape differs from forward input"));
    }
    let dy = grad_output.values();
    let xh = cache.normalized.values();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] += dy[i] * xh[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let count = (n * hw) as f64;
    let mut dx = vec![0.0; dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma.values()[ch] * cache.inv_std[ch];
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = match cache.mode {
                    Mode::Train => scale * (dy[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count),
                    Mode::Eval => scale * dy[i],
                };
            }
        }
    }
    Ok((
        Tensor::new(grad_output.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Batch normalization layer: `weight` is gamma, `bias` is beta.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub momentum: f64,
    pub eps: f64,
    state: LayerState,
    cache: Option<BatchNormCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, 0.1, 1e-5)
    }

    pub fn with_params(channels: usize, momentum: f64, eps: f64) -> Self {
        let mut state = LayerState::default();
        state.add_param("weight", Tensor::full(&[channels], 1.0));
        state.add_param("bias", Tensor::zeros(&[channels]));
        state.add_buffer("running_mean", Tensor::zeros(&[channels]));
        state.add_buffer("running_var", Tensor::full(&[channels], 1.0));
        Self {
            momentum,
            eps,
            state,
            cache: None,
        }
    }
}

impl Module for BatchNorm2d {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, cache) = batch_norm(input, &mut self.state, self.momentum, self.eps)?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Numeric("batch norm backward called before forward".into()))?;
        let (dx, dgamma, dbeta) = batch_norm_backward(cache, self.state.param("weight"), grad_output)?;
        self.state.set_grad("weight", dgamma);
        self.state.set_grad("bias", dbeta);
        Ok(dx)
    }

    fn states(&self) -> Vec<&LayerState> {
        vec![&self.state]
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        vec![&mut self.state]
    }

    fn cached_len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.normalized.len())
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
