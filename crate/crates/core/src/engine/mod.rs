//! Minimal numerical core: layers with hand-derived gradients, the Adam
//! optimizer, softmax cross-entropy and finite-difference verification.
//!
//! Every layer implements [`Module`]. A forward pass caches whatever the
//! backward pass needs; `backward` overwrites the parameter gradients stored
//! in the layer's [`LayerState`] and returns the gradient with respect to the
//! layer input.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dropout;
mod gradcheck;
mod layer;
mod linear;
mod loss;
mod pool;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Result, Tensor};

pub use activation::{activation, activation_backward, Activation, ActivationKind, SAFE_LOG_CLAMP};
pub use adam::{adam_step, AdamState};
pub use batchnorm::{batch_norm, batch_norm_backward, BatchNorm2d, BatchNormCache};
pub use conv::{conv2d, conv2d_backward, conv2d_grouped, Conv2d, ConvGrads};
pub use dropout::{dropout, Dropout};
pub use gradcheck::{gradient_check, GradCheckReport, FD_STEP, REL_ERR_FLOOR};
pub use layer::{Layer, Sequential};
pub use linear::{linear, linear_backward, Flatten, Linear};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_grad};
pub use pool::{avg_pool, avg_pool_backward, AvgPool};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Parameters, their gradients and non-trainable buffers of one layer.
#[derive(Clone, Debug, Default)]
pub struct LayerState {
    pub params: BTreeMap<String, Tensor>,
    pub grads: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
    pub mode: Mode,
}

impl LayerState {
    pub fn add_param(&mut self, name: &str, value: Tensor) {
        self.grads
            .insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) {
        debug_assert_eq!(self.params[name].shape(), grad.shape());
        self.grads.insert(name.to_string(), grad);
    }

    pub fn zero_grads(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(0.0));
    }

    pub fn param_len(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

pub trait Module {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    fn states(&self) -> Vec<&LayerState>;

    fn states_mut(&mut self) -> Vec<&mut LayerState>;

    fn set_mode(&mut self, mode: Mode) {
        for state in self.states_mut() {
            state.mode = mode;
        }
    }

    /// Reuse the current dropout masks on subsequent forward passes.
    fn freeze_dropout(&mut self, _frozen: bool) {}

    /// Number of f64 values held in forward caches.
    fn cached_len(&self) -> usize {
        0
    }

    fn clear_cache(&mut self) {}
}

/// Number of trainable scalars. Buffers are excluded.
pub fn param_count(module: &dyn Module) -> usize {
    module.states().iter().map(|s| s.param_len()).sum()
}
