use serde::{Deserialize, Serialize};

use super::{LayerState, Module};
use crate::{Error, Result, Tensor};

/// Lower clamp applied before the logarithm of `safe_log`.
pub const SAFE_LOG_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Square,
    SafeLog,
    Elu,
}

fn apply(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Square => x * x,
        ActivationKind::SafeLog => x.max(SAFE_LOG_CLAMP).ln(),
        ActivationKind::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp_m1()
            }
        }
    }
}

fn derivative(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Square => 2.0 * x,
        // the clamp is flat below the threshold
        ActivationKind::SafeLog => {
            if x >= SAFE_LOG_CLAMP {
                1.0 / x
            } else {
                0.0
            }
        }
        ActivationKind::Elu => {
            if x > 0.0 {
                1.0
            } else {
                x.exp()
            }
        }
    }
}

pub fn activation(input: &Tensor, kind: ActivationKind) -> Tensor {
    Tensor::new(
        input.shape().to_vec(),
        input.values().iter().map(|&x| apply(kind, x)).collect(),
    )
    .expect("shape preserved")
}

pub fn activation_backward(input: &Tensor, kind: ActivationKind, grad_output: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_output.shape() {
        return Err(Error::dim("grad_output", "shape differs from forward input"));
    }
    let dx = input
        .values()
        .iter()
        .zip(grad_output.values())
        .map(|(&x, &g)| g * derivative(kind, x))
        .collect();
    Tensor::new(input.shape().to_vec(), dx)
}

#[derive(Clone, Debug)]
pub struct Activation {
    pub kind: ActivationKind,
    state: LayerState,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self {
            kind,
            state: LayerState::default(),
            cache: None,
        }
    }
}

impl Module for Activation {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = activation(input, self.kind);
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Numeric("activation backward called before forward".into()))?;
        activation_backward(input, self.kind, grad_output)
    }

    fn states(&self) -> Vec<&LayerState> {
        vec![&self.state]
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        vec![&mut self.state]
    }

    fn cached_len(&self) -> usize {
        self.cache.as_ref().map_or(0, Tensor::len)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(kind: ActivationKind, x: f64) -> f64 {
        activation(&Tensor::full(&[1], x), kind).values()[0]
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(scalar(ActivationKind::Square, -3.0), 9.0);
        assert_eq!(scalar(ActivationKind::SafeLog, 1.0), 0.0);
        assert_eq!(scalar(ActivationKind::Elu, 0.0), 0.0);
        assert_eq!(scalar(ActivationKind::SafeLog, 0.0), SAFE_LOG_CLAMP.ln());
    }

    #[test]
    fn elu_is_continuous_at_zero() {
        let left = scalar(ActivationKind::Elu, -1e-12);
        let right = scalar(ActivationKind::Elu, 1e-12);
        assert!((left - right).abs() < 1e-11);
    }

    #[test]
    fn safe_log_never_infinite() {
        let input = Tensor::new(vec![3], vec![0.0, 1e-300, -5.0]).unwrap();
        assert!(activation(&input, ActivationKind::SafeLog).all_finite());
    }
}
