use super::{LayerState, Module};
use crate::{Error, Result, Tensor};

fn pooled_width(w: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::Parameter("pool window and stride must be positive".into()));
    }
    if window > w {
        return Err(Error::dim("width", format!("pool window {window} exceeds input width {w}")));
    }
    Ok((w - window) / stride + 1)
}

/// Average pooling along the last (time) axis of `[N, C, H, W]`.
pub fn avg_pool(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("input")?;
    let ow = pooled_width(w, window, stride)?;
    let x = input.values();
    let rows = n * c * h;
    let mut out = Vec::with_capacity(rows * ow);
    let scale = 1.0 / window as f64;
    for r in 0..rows {
        let row = &x[r * w..][..w];
        for o in 0..ow {
            out.push(row[o * stride..][..window].iter().sum::<f64>() * scale);
        }
    }
    Tensor::new(vec![n, c, h, ow], out)
}

pub fn avg_pool_backward(input_shape: &[usize], window: usize, stride: usize, grad_output: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::dim("input", format!("expected rank 4, got {input_shape:?}")));
    };
    let ow = pooled_width(w, window, stride)?;
    if grad_output.shape() != [n, c, h, ow] {
        return Err(Error::dim("grad_output", format!("expected {:?}", [n, c, h, ow])));
    }
    let dy = grad_output.values();
    let mut dx = vec![0.0; n * c * h * w];
    let scale = 1.0 / window as f64;
    for r in 0..n * c * h {
        let row = &mut dx[r * w..][..w];
        for o in 0..ow {
            let g = dy[r * ow + o] * scale;
            row[o * stride..][..window].iter_mut().for_each(|d| *d += g);
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

#[derive(Clone, Debug)]
pub struct AvgPool {
    pub window: usize,
    pub stride: usize,
    state: LayerState,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            state: LayerState::default(),
            input_shape: None,
        }
    }
}

impl Module for AvgPool {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = avg_pool(input, self.window, self.stride)?;
        self.input_shape = Some(input.shape().to_vec());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::Numeric("pool backward called before forward".into()))?;
        avg_pool_backward(shape, self.window, self.stride, grad_output)
    }

    fn states(&self) -> Vec<&LayerState> {
        vec![&self.state]
    }

    fn states_mut(&mut self) -> Vec<&mut LayerState> {
        vec![&mut self.state]
    }
}
