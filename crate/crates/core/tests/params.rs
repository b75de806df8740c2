//! Parameter counts against closed forms written from the layer-shape table.

use eegbench::engine::{param_count, Flatten, Layer, Linear, Sequential};
use eegbench::models::{build_model, Architecture, ModelConfig, ModelName};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pooled(len: usize, window: usize, stride: usize) -> usize {
    (len - window) / stride + 1
}

fn closed_form(config: &ModelConfig) -> usize {
    let (c, t, k) = (config.channels, config.timepoints, config.classes);
    match &config.arch {
        Architecture::Sccnet(p) => {
            let nu = p.spatial_kernels.unwrap_or(c);
            let nt = p.temporal_kernels;
            let spatial = nu * c + nu + 2 * nu;
            let temporal = nt * nu * p.temporal_len + nt + 2 * nt;
            let t2 = t + 2 * p.temporal_pad - p.temporal_len + 1;
            spatial + temporal + nt * pooled(t2, p.pool, p.pool_stride) * k + k
        }
        Architecture::Eegnet(p) => {
            let kt = config.eegnet_temporal_len(p);
            let f1d = p.f1 * p.depth;
            let t1 = t + 2 * (kt / 2) - kt + 1;
            let t2 = pooled(t1, p.pool1, p.pool1);
            let t3 = t2 + 2 * (p.separable_len / 2) - p.separable_len + 1;
            let t4 = pooled(t3, p.pool2, p.pool2);
            p.f1 * kt
                + 2 * p.f1
                + f1d * c
                + 2 * f1d
                + f1d * p.separable_len
                + p.f2 * f1d
                + 2 * p.f2
                + p.f2 * t4 * k
                + k
        }
        Architecture::Shallowconvnet(p) => {
            let t1 = t - p.temporal_len + 1;
            p.temporal_kernels * p.temporal_len
                + p.temporal_kernels
                + p.spatial_kernels * p.temporal_kernels * c
                + 2 * p.spatial_kernels
                + p.spatial_kernels * pooled(t1, p.pool, p.pool_stride) * k
                + k
        }
    }
}

#[test]
fn linear_only_toy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Sequential::new(vec![Layer::Flatten(Flatten::new()), Layer::Linear(Linear::new(10, 4, &mut rng))]);
    assert_eq!(param_count(&net), 44);
}

#[test]
fn canonical_counts() {
    let expected = [(ModelName::Sccnet, 9254), (ModelName::Eegnet, 2548), (ModelName::Shallowconvnet, 41284)];
    for (name, count) in expected {
        let config = ModelConfig::canonical(name);
        let model = build_model(&config, 0).unwrap();
        assert_eq!(closed_form(&config), count, "{name} closed form");
        assert_eq!(model.param_count(), count, "{name} built");
    }
}

#[test]
fn reference_counts_are_reported() {
    assert_eq!(ModelName::Sccnet.reference_param_count(), 9254);
    assert_eq!(ModelName::Eegnet.reference_param_count(), 2548);
    assert_eq!(ModelName::Shallowconvnet.reference_param_count(), 47644);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_form_matches_any_valid_shape(
        c in 2usize..8,
        t in 160usize..320,
        k in 2usize..5,
        model in 0usize..3,
    ) {
        let name = ModelName::ALL[model];
        let config = ModelConfig::new(name, c, t, k, 64.0);
        let built = build_model(&config, 1).unwrap();
        prop_assert_eq!(built.param_count(), closed_form(&config));
    }
}
