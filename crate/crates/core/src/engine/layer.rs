use super::{Activation, AvgPool, BatchNorm2d, Conv2d, Dropout, Flatten, LayerState, Linear, Mode, Module};
use crate::{Result, Tensor};

#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm2d),
    AvgPool(AvgPool),
    Activation(Activation),
    Dropout(Dropout),
    Flatten(Flatten),
    Linear(Linear),
}

macro_rules! dispatch {
    ($self:expr, $inner:ident => $body:expr) => {
        match $self {
            Layer::Conv2d($inner) => $body,
            Layer::BatchNorm($inner) => $body,
            Layer::AvgPool($inner) => $body,
            Layer::Activation($inner) => $body,
            Layer::Dropout($inner) => $body,
            Layer::Flatten($inner) => $body,
            Layer::Linear($inner) => $body,
        }
    };
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::AvgPool(_) => "avg_pool",
            Layer::Activation(_) => "activation",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Linear(_) => "linear",
        }
    }

    pub fn state(&self) -> &LayerState {
        dispatch!(self, l => l.states()[0])
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        dispatch!(self, l => l.states_mut().remove(0))
    }
}

impl Module for Layer {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.forward(input))
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.backward(grad_output))
    }

    fn states(&self) -> Vec<&LayerState> {
        dispatch!(self, l => l.states())
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        dispatch!(self, l => l.states_mut())
    }

    fn set_mode(&mut self, mode: Mode) {
        dispatch!(self, l => l.set_mode(mode))
    }

    fn freeze_dropout(&mut self, frozen: bool) {
        dispatch!(self, l => l.freeze_dropout(frozen))
    }

    fn cached_len(&self) -> usize {
        dispatch!(self, l => l.cached_len())
    }

    fn clear_cache(&mut self) {
        dispatch!(self, l => l.clear_cache())
    }
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }
}

impl Module for Sequential {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn states(&self) -> Vec<&LayerState> {
        self.layers.iter().map(Layer::state).collect()
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        self.layers.iter_mut().map(Layer::state_mut).collect()
    }

    fn set_mode(&mut self, mode: Mode) {
        self.layers.iter_mut().for_each(|l| l.set_mode(mode));
    }

    fn freeze_dropout(&mut self, frozen: bool) {
        self.layers.iter_mut().for_each(|l| l.freeze_dropout(frozen));
    }

    fn cached_len(&self) -> usize {
        self.layers.iter().map(Layer::cached_len).sum()
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }
}
