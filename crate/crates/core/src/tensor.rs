use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major array of 64-bit floats.
///
/// `shape` may contain zero-length axes (an empty trial set is a valid
/// tensor), but the element count always equals the product of the shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::dim("rank", "tensor must have at least one axis"));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim(
                "values",
                format!(
                    "shape {shape:?} implies {expected} values, got {}",
                    values.len()
                ),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty(), "tensor must have at least one axis");
        Self {
            shape: shape.to_vec(),
            values: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        assert!(!shape.is_empty(), "tensor must have at least one axis");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: (0..n).map(f).collect(),
        }
    }

    /// Uniform samples in `[low, high)`.
    pub fn random_uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(low..high))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Shape as `[N, C, H, W]`, or a dimension error naming `what`.
    pub fn dims4(&self, what: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::dim(
                what,
                format!("expected a rank-4 tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn dims2(&self, what: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [n, d] => Ok([n, d]),
            _ => Err(Error::dim(
                what,
                format!("expected a rank-2 tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }
}
