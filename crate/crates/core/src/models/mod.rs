//! The built-in model base: SCCNet, EEGNet and ShallowConvNet.
//!
//! All models consume `[N, 1, C, T]` input (channels on the height axis,
//! time on the width axis) and emit `[N, K]` logits. Spatial kernels are
//! `(C, 1)` convolutions and temporal kernels are `(1, k)` convolutions.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    Activation, ActivationKind, AvgPool, BatchNorm2d, Conv2d, Dropout, Flatten, Layer, LayerState, Linear, Mode, Module,
    Sequential,
};
use crate::{Error, Result, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorEntry, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Sccnet,
    Eegnet,
    Shallowconvnet,
}

impl ModelName {
    pub const ALL: [ModelName; 3] = [ModelName::Eegnet, ModelName::Shallowconvnet, ModelName::Sccnet];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Sccnet => "sccnet",
            ModelName::Eegnet => "eegnet",
            ModelName::Shallowconvnet => "shallowconvnet",
        }
    }

    /// Trainable parameter counts reported for the original implementations
    /// (22 channels, four classes). Shown next to our own counts as a
    /// diagnostic.
    pub fn reference_param_count(self) -> usize {
        match self {
            ModelName::Eegnet => 2_548,
            ModelName::Shallowconvnet => 47_644,
            ModelName::Sccnet => 9_254,
        }
    }
}

impl std::fmt::Display for ModelName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sccnet" => Ok(ModelName::Sccnet),
            "eegnet" => Ok(ModelName::Eegnet),
            "shallowconvnet" | "shallow" => Ok(ModelName::Shallowconvnet),
            other => Err(Error::Lookup(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SccnetParams {
    /// Number of spatial kernels; `None` means one per channel.
    pub spatial_kernels: Option<usize>,
    pub temporal_kernels: usize,
    pub temporal_len: usize,
    pub temporal_pad: usize,
    pub pool: usize,
    pub pool_stride: usize,
    pub dropout: f64,
}

impl Default for SccnetParams {
    fn default() -> Self {
        Self {
            spatial_kernels: None,
            temporal_kernels: 20,
            temporal_len: 12,
            temporal_pad: 6,
            pool: 62,
            pool_stride: 12,
            dropout: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegnetParams {
    pub f1: usize,
    /// Temporal kernel length; `None` means `round(fs / 2)`.
    pub temporal_len: Option<usize>,
    pub depth: usize,
    pub f2: usize,
    pub separable_len: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
}

impl Default for EegnetParams {
    fn default() -> Self {
        Self {
            f1: 8,
            temporal_len: None,
            depth: 2,
            f2: 16,
            separable_len: 16,
            pool1: 4,
            pool2: 8,
            dropout: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShallowParams {
    pub temporal_kernels: usize,
    pub temporal_len: usize,
    pub spatial_kernels: usize,
    pub pool: usize,
    pub pool_stride: usize,
    pub dropout: f64,
}

impl Default for ShallowParams {
    fn default() -> Self {
        Self {
            temporal_kernels: 40,
            temporal_len: 25,
            spatial_kernels: 40,
            pool: 75,
            pool_stride: 15,
            dropout: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Architecture {
    Sccnet(SccnetParams),
    Eegnet(EegnetParams),
    Shallowconvnet(ShallowParams),
}

impl Architecture {
    pub fn canonical(name: ModelName) -> Self {
        match name {
            ModelName::Sccnet => Architecture::Sccnet(SccnetParams::default()),
            ModelName::Eegnet => Architecture::Eegnet(EegnetParams::default()),
            ModelName::Shallowconvnet => Architecture::Shallowconvnet(ShallowParams::default()),
        }
    }

    pub fn name(&self) -> ModelName {
        match self {
            Architecture::Sccnet(_) => ModelName::Sccnet,
            Architecture::Eegnet(_) => ModelName::Eegnet,
            Architecture::Shallowconvnet(_) => ModelName::Shallowconvnet,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub timepoints: usize,
    pub classes: usize,
    pub fs: f64,
    pub arch: Architecture,
}

impl ModelConfig {
    pub fn new(name: ModelName, channels: usize, timepoints: usize, classes: usize, fs: f64) -> Self {
        Self {
            channels,
            timepoints,
            classes,
            fs,
            arch: Architecture::canonical(name),
        }
    }

    /// 22 channels, 562 samples, four classes at 128 Hz.
    pub fn canonical(name: ModelName) -> Self {
        Self::new(name, 22, 562, 4, 128.0)
    }

    pub fn name(&self) -> ModelName {
        self.arch.name()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Parameter("channels must be at least 1".into()));
        }
        if self.timepoints == 0 {
            return Err(Error::Parameter("timepoints must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Parameter("at least two classes are required".into()));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::Parameter(format!("sampling rate {} is not positive", self.fs)));
        }
        Ok(())
    }

    pub fn eegnet_temporal_len(&self, p: &EegnetParams) -> usize {
        p.temporal_len.unwrap_or_else(|| ((self.fs / 2.0).round() as usize).max(1))
    }
}

/// A built model: configuration, seed and the layer stack.
#[derive(Clone, Debug)]
pub struct ModelInstance {
    pub config: ModelConfig,
    pub rng_seed: u64,
    net: Sequential,
}

fn dropout_seed(seed: u64, index: usize) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1))
}

/// Builds a model and verifies its dimension chain with a dry forward pass.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelInstance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config.channels;
    let mut layers: Vec<Layer> = Vec::new();
    let drop = |rate: f64, index: usize| -> Result<Layer> { Ok(Layer::Dropout(Dropout::new(rate, dropout_seed(seed, index))?)) };
    match &config.arch {
        Architecture::Sccnet(p) => {
            let nu = p.spatial_kernels.unwrap_or(c);
            layers.push(Layer::Conv2d(Conv2d::new(1, nu, (c, 1), (0, 0), 1, true, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(nu)));
            layers.push(Layer::Conv2d(Conv2d::new(
                nu,
                p.temporal_kernels,
                (1, p.temporal_len),
                (0, p.temporal_pad),
                1,
                true,
                &mut rng,
            )));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(p.temporal_kernels)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::Square)));
            layers.push(drop(p.dropout, layers.len())?);
            layers.push(Layer::AvgPool(AvgPool::new(p.pool, p.pool_stride)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::SafeLog)));
        }
        Architecture::Eegnet(p) => {
            let klen = config.eegnet_temporal_len(p);
            let fd = p.f1 * p.depth;
            layers.push(Layer::Conv2d(Conv2d::new(1, p.f1, (1, klen), (0, klen / 2), 1, false, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(p.f1)));
            layers.push(Layer::Conv2d(Conv2d::new(p.f1, fd, (c, 1), (0, 0), p.f1, false, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(fd)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::Elu)));
            layers.push(Layer::AvgPool(AvgPool::new(p.pool1, p.pool1)));
            layers.push(drop(p.dropout, layers.len())?);
            layers.push(Layer::Conv2d(Conv2d::new(
                fd,
                fd,
                (1, p.separable_len),
                (0, p.separable_len / 2),
                fd,
                false,
                &mut rng,
            )));
            layers.push(Layer::Conv2d(Conv2d::new(fd, p.f2, (1, 1), (0, 0), 1, false, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(p.f2)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::Elu)));
            layers.push(Layer::AvgPool(AvgPool::new(p.pool2, p.pool2)));
            layers.push(drop(p.dropout, layers.len())?);
        }
        Architecture::Shallowconvnet(p) => {
            layers.push(Layer::Conv2d(Conv2d::new(
                1,
                p.temporal_kernels,
                (1, p.temporal_len),
                (0, 0),
                1,
                true,
                &mut rng,
            )));
            layers.push(Layer::Conv2d(Conv2d::new(
                p.temporal_kernels,
                p.spatial_kernels,
                (c, 1),
                (0, 0),
                1,
                false,
                &mut rng,
            )));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(p.spatial_kernels)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::Square)));
            layers.push(Layer::AvgPool(AvgPool::new(p.pool, p.pool_stride)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::SafeLog)));
            layers.push(drop(p.dropout, layers.len())?);
        }
    }
    layers.push(Layer::Flatten(Flatten::new()));

    // Dry run through the feature extractor to size the classifier and
    // surface the first inconsistent layer.
    let mut x = Tensor::zeros(&[1, 1, c, config.timepoints]);
    for (index, layer) in layers.iter_mut().enumerate() {
        layer.set_mode(Mode::Eval);
        x = layer.forward(&x).map_err(|e| Error::Build {
            index,
            layer: layer.kind().to_string(),
            source: Box::new(e),
        })?;
    }
    let features = x.shape()[1];
    if features == 0 {
        return Err(Error::Build {
            index: layers.len() - 1,
            layer: "flatten".into(),
            source: Box::new(Error::dim("features", "feature extractor produced no features")),
        });
    }
    layers.push(Layer::Linear(Linear::new(features, config.classes, &mut rng)));

    let mut model = ModelInstance {
        config: config.clone(),
        rng_seed: seed,
        net: Sequential::new(layers),
    };
    let logits = model.forward(&Tensor::zeros(&[1, 1, c, config.timepoints]))?;
    debug_assert_eq!(logits.shape(), &[1, config.classes]);
    model.clear_caches();
    model.set_mode(Mode::Train);
    Ok(model)
}

impl ModelInstance {
    pub fn name(&self) -> ModelName {
        self.config.name()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.net.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.net.layers
    }

    pub fn param_count(&self) -> usize {
        crate::engine::param_count(self)
    }

    /// Copies of all parameters and buffers, for best-epoch selection.
    pub fn snapshot(&self) -> Vec<LayerState> {
        self.net
            .layers
            .iter()
            .map(|l| {
                let s = l.state();
                LayerState {
                    params: s.params.clone(),
                    grads: Default::default(),
                    buffers: s.buffers.clone(),
                    mode: s.mode,
                }
            })
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[LayerState]) {
        for (layer, saved) in self.net.layers.iter_mut().zip(snapshot) {
            let state = layer.state_mut();
            state.params.clone_from(&saved.params);
            state.buffers.clone_from(&saved.buffers);
        }
    }

    /// Drops forward caches (large for wide inputs).
    pub fn clear_caches(&mut self) {
        self.net.clear_cache();
    }

    /// Named tensors in a stable order: `layers.{i}.{param|buffer}`.
    pub fn named_tensors(&self) -> Vec<(String, bool, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.net.layers.iter().enumerate() {
            let s = layer.state();
            for (k, t) in &s.params {
                out.push((format!("layers.{i}.{k}"), true, t));
            }
            for (k, t) in &s.buffers {
                out.push((format!("layers.{i}.{k}"), false, t));
            }
        }
        out
    }

    pub(crate) fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let rest = name.strip_prefix("layers.")?;
        let (idx, key) = rest.split_once('.')?;
        let layer = self.net.layers.get_mut(idx.parse::<usize>().ok()?)?;
        let state = layer.state_mut();
        if state.params.contains_key(key) {
            state.params.get_mut(key)
        } else {
            state.buffers.get_mut(key)
        }
    }

    /// Weight tensor of the SCCNet spatial convolution, `[Nu, 1, C, 1]`.
    pub fn spatial_kernels(&self) -> Result<&Tensor> {
        self.sccnet_conv(0)
    }

    /// Weight tensor of the SCCNet spatio-temporal convolution, `[F, Nu, 1, L]`.
    pub fn temporal_kernels(&self) -> Result<&Tensor> {
        self.sccnet_conv(2)
    }

    fn sccnet_conv(&self, index: usize) -> Result<&Tensor> {
        if self.name() != ModelName::Sccnet {
            return Err(Error::UnsupportedModel(format!(
                "kernel visualization is available for sccnet only, got {}",
                self.name()
            )));
        }
        match &self.net.layers[index] {
            Layer::Conv2d(c) => Ok(c.weight()),
            other => Err(Error::UnsupportedModel(format!("layer {index} is {}", other.kind()))),
        }
    }
}

impl Module for ModelInstance {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [_, one, c, t] = input.dims4("input")?;
        if one != 1 || c != self.config.channels || t != self.config.timepoints {
            return Err(Error::dim(
                "input",
                format!(
                    "model expects [N, 1, {}, {}], got {:?}",
                    self.config.channels,
                    self.config.timepoints,
                    input.shape()
                ),
            ));
        }
        self.net.forward(input)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        self.net.backward(grad_output)
    }

    fn states(&self) -> Vec<&LayerState> {
        self.net.states()
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        self.net.states_mut()
    }

    fn set_mode(&mut self, mode: Mode) {
        self.net.set_mode(mode)
    }

    fn freeze_dropout(&mut self, frozen: bool) {
        self.net.freeze_dropout(frozen)
    }

    fn cached_len(&self) -> usize {
        self.net.cached_len()
    }

    fn clear_cache(&mut self) {
        self.net.clear_cache()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sccnet_shape_contract() {
        let mut model = build_model(&ModelConfig::new(ModelName::Sccnet, 22, 562, 4, 125.0), 0).unwrap();
        model.set_mode(Mode::Eval);
        let logits = model.forward(&Tensor::zeros(&[1, 1, 22, 562])).unwrap();
        assert_eq!(logits.shape(), &[1, 4]);
    }

    #[test]
    fn eegnet_first_layer_is_temporal() {
        let model = build_model(&ModelConfig::new(ModelName::Eegnet, 22, 562, 4, 125.0), 0).unwrap();
        let Layer::Conv2d(conv) = &model.layers()[0] else { panic!("layer 0 is not a conv") };
        let shape = conv.weight().shape();
        assert_eq!(shape[..3], [8, 1, 1]);
        assert_eq!(shape[3], 63);
    }

    #[test]
    fn too_short_input_names_failing_layer() {
        let err = build_model(&ModelConfig::new(ModelName::Shallowconvnet, 2, 64, 2, 128.0), 0).unwrap_err();
        match err {
            Error::Build { index, layer, .. } => {
                assert_eq!(index, 4);
                assert_eq!(layer, "avg_pool");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::new(ModelName::Sccnet, 4, 80, 2, 64.0);
        let a = build_model(&cfg, 5).unwrap();
        let b = build_model(&cfg, 5).unwrap();
        let c = build_model(&cfg, 6).unwrap();
        let flat = |m: &ModelInstance| m.named_tensors().iter().flat_map(|t| t.2.values().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn rejects_single_class() {
        let cfg = ModelConfig::new(ModelName::Sccnet, 4, 80, 1, 64.0);
        assert!(matches!(build_model(&cfg, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn non_sccnet_has_no_visualizable_kernels() {
        let model = build_model(&ModelConfig::new(ModelName::Eegnet, 4, 80, 2, 64.0), 0).unwrap();
        assert!(matches!(model.spatial_kernels(), Err(Error::UnsupportedModel(_))));
    }
}
