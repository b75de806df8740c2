use rand::Rng;

use super::{LayerState, Module};
use crate::{Error, Result, Tensor};

/// `x Wᵀ + b` for `x: [N, D]`, `W: [K, D]`, `b: [K]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, d] = input.dims2("input")?;
    let [k, dw] = weight.dims2("weight")?;
    if d != dw {
        return Err(Error::dim("features", format!("input has {d} features, weight expects {dw}")));
    }
    if bias.len() != k {
        return Err(Error::dim("out_features", format!("bias has {} entries for {k} outputs", bias.len())));
    }
    let x = input.values();
    let w = weight.values();
    let mut out = Vec::with_capacity(n * k);
    for row in x.chunks_exact(d.max(1)).take(n) {
        for (j, b) in bias.values().iter().enumerate() {
            let wr = &w[j * d..][..d];
            out.push(b + row.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>());
        }
    }
    if d == 0 {
        out = (0..n).flat_map(|_| bias.values().iter().copied()).collect();
    }
    Tensor::new(vec![n, k], out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_output: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, d] = input.dims2("input")?;
    let [k, _] = weight.dims2("weight")?;
    if grad_output.shape() != [n, k] {
        return Err(Error::dim("grad_output", format!("expected {:?}", [n, k])));
    }
    let x = input.values();
    let w = weight.values();
    let dy = grad_output.values();
    let mut dx = vec![0.0; n * d];
    let mut dw = vec![0.0; k * d];
    let mut db = vec![0.0; k];
    for i in 0..n {
        let xr = &x[i * d..][..d];
        let dxr = &mut dx[i * d..][..d];
        for j in 0..k {
            let g = dy[i * k + j];
            db[j] += g;
            let wr = &w[j * d..][..d];
            let dwr = &mut dw[j * d..][..d];
            for t in 0..d {
                dxr[t] += g * wr[t];
                dwr[t] += g * xr[t];
            }
        }
    }
    Ok((
        Tensor::new(vec![n, d], dx)?,
        Tensor::new(vec![k, d], dw)?,
        Tensor::new(vec![k], db)?,
    ))
}

#[derive(Clone, Debug)]
pub struct Linear {
    state: LayerState,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = (6.0 / in_features.max(1) as f64).sqrt();
        let weight = Tensor::random_uniform(&[out_features, in_features], -bound, bound, rng);
        Self::from_weights(weight, Tensor::zeros(&[out_features]))
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Self {
        let mut state = LayerState::default();
        state.add_param("weight", weight);
        state.add_param("bias", bias);
        Self { state, cache: None }
    }
}

impl Module for Linear {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = linear(input, self.state.param("weight"), self.state.param("bias"))?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Numeric("linear backward called before forward".into()))?;
        let (dx, dw, db) = linear_backward(input, self.state.param("weight"), grad_output)?;
        self.state.set_grad("weight", dw);
        self.state.set_grad("bias", db);
        Ok(dx)
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

/// Reshapes `[N, ...]` to `[N, prod(...)]`.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    state: LayerState,
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Flatten {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = input.shape().to_vec();
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.input_shape = Some(shape);
        input.clone().reshape(vec![n, rest])
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .clone()
            .ok_or_else(|| Error::Numeric("flatten backward called before forward".into()))?;
        grad_output.clone().reshape(shape)
    }

    fn states(&self) -> Vec<&LayerState> {
        vec![&self.state]
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        vec![&mut self.state]
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::random_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::new(vec![1, 2], vec![1., 2.]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![3., 4.]).unwrap();
        let b = Tensor::new(vec![1], vec![5.]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().values(), &[16.]);
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::random_uniform(&[5, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::random_uniform(&[3, 6], -1.0, 1.0, &mut rng);
        let b = Tensor::random_uniform(&[3], -1.0, 1.0, &mut rng);
        let batch = linear(&x, &w, &b).unwrap();
        for i in 0..5 {
            let row = Tensor::new(vec![1, 6], x.values()[i * 6..][..6].to_vec()).unwrap();
            let single = linear(&row, &w, &b).unwrap();
            assert_eq!(single.values(), &batch.values()[i * 3..][..3]);
        }
    }

    #[test]
    fn feature_mismatch() {
        let err = linear(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "features", .. }));
    }
}
