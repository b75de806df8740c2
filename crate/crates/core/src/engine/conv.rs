use rand::Rng;

use super::{LayerState, Module};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(input: &Tensor, kernels: &Tensor, pad: (usize, usize), groups: usize) -> Result<Geometry> {
    let [n, cin, h, w] = input.dims4("input")?;
    let [cout, cin_g, kh, kw] = kernels.dims4("kernels")?;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::dim(
            "groups",
            format!("{groups} groups do not divide {cin} input / {cout} output channels"),
        ));
    }
    if cin_g != cin / groups {
        return Err(Error::dim(
            "in_channels",
            format!("kernels expect {cin_g} input channels per group, input has {cin} over {groups} groups"),
        ));
    }
    let (ph, pw) = pad;
    if kh == 0 || kh > h + 2 * ph {
        return Err(Error::dim(
            "height",
            format!("kernel height {kh} exceeds padded input height {}", h + 2 * ph),
        ));
    }
    if kw == 0 || kw > w + 2 * pw {
        return Err(Error::dim(
            "width",
            format!("kernel width {kw} exceeds padded input width {}", w + 2 * pw),
        ));
    }
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g: cout / groups,
        kh,
        kw,
        ph,
        pw,
        oh: h + 2 * ph - kh + 1,
        ow: w + 2 * pw - kw + 1,
    })
}

impl Geometry {
    /// Input row touched by output row `o` and kernel row `k`, if any.
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        (o + k).checked_sub(self.ph).filter(|&r| r < self.h)
    }

    /// Output column range `[lo, hi)` whose input column `o + k - pw` is valid.
    fn col_range(&self, k: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(k);
        let hi = (self.w + self.pw).saturating_sub(k).min(self.ow);
        (lo, hi)
    }
}

/// Stride-1 cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>, pad: (usize, usize)) -> Result<Tensor> {
    conv2d_grouped(input, kernels, bias, pad, 1)
}

/// Grouped variant of [`conv2d`]; `groups == in_channels` gives a depthwise
/// convolution.
pub fn conv2d_grouped(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    pad: (usize, usize),
    groups: usize,
) -> Result<Tensor> {
    let g = geometry(input, kernels, pad, groups)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::dim(
                "out_channels",
                format!("bias has {} entries for {} kernels", b.len(), g.cout),
            ));
        }
    }
    let x = input.values();
    let k = kernels.values();
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.cout * plane];
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let out_plane = &mut out[(n * g.cout + co) * plane..][..plane];
            if let Some(b) = bias {
                out_plane.fill(b.values()[co]);
            }
            for cig in 0..g.cin_g {
                let ci = group * g.cin_g + cig;
                let in_plane = &x[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                let kbase = (co * g.cin_g + cig) * g.kh * g.kw;
                for ki in 0..g.kh {
                    for o in 0..g.oh {
                        let Some(r) = g.in_row(o, ki) else { continue };
                        let in_row = &in_plane[r * g.w..][..g.w];
                        let out_row = &mut out_plane[o * g.ow..][..g.ow];
                        for kj in 0..g.kw {
                            let wv = k[kbase + ki * g.kw + kj];
                            let (lo, hi) = g.col_range(kj);
                            if lo >= hi {
                                continue;
                            }
                            let src = &in_row[lo + kj - g.pw..hi + kj - g.pw];
                            for (dst, s) in out_row[lo..hi].iter_mut().zip(src) {
                                *dst += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Dot product with four independent accumulators so the reduction can use
/// vector lanes; the summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    with_bias: bool,
    pad: (usize, usize),
    groups: usize,
    grad_output: &Tensor,
) -> Result<ConvGrads> {
    let g = geometry(input, kernels, pad, groups)?;
    if grad_output.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::dim(
            "grad_output",
            format!(
                "expected shape {:?}, got {:?}",
                [g.n, g.cout, g.oh, g.ow],
                grad_output.shape()
            ),
        ));
    }
    let x = input.values();
    let k = kernels.values();
    let dy = grad_output.values();
    let plane = g.oh * g.ow;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; if with_bias { g.cout } else { 0 }];
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let dy_plane = &dy[(n * g.cout + co) * plane..][..plane];
            if with_bias {
                db[co] += dy_plane.iter().sum::<f64>();
            }
            for cig in 0..g.cin_g {
                let ci = group * g.cin_g + cig;
                let in_off = (n * g.cin + ci) * g.h * g.w;
                let kbase = (co * g.cin_g + cig) * g.kh * g.kw;
                for ki in 0..g.kh {
                    for o in 0..g.oh {
                        let Some(r) = g.in_row(o, ki) else { continue };
                        let row_off = in_off + r * g.w;
                        let dy_row = &dy_plane[o * g.ow..][..g.ow];
                        for kj in 0..g.kw {
                            let (lo, hi) = g.col_range(kj);
                            if lo >= hi {
                                continue;
                            }
                            let start = row_off + lo + kj - g.pw;
                            let len = hi - lo;
                            let grad_row = &dy_row[lo..hi];
                            let src = &x[start..start + len];
                            dk[kbase + ki * g.kw + kj] += dot(grad_row, src);
                            let wv = k[kbase + ki * g.kw + kj];
                            for (d, gy) in dx[start..start + len].iter_mut().zip(grad_row) {
                                *d += wv * gy;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        kernels: Tensor::new(kernels.shape().to_vec(), dk)?,
        bias: with_bias.then(|| Tensor::new(vec![g.cout], db)).transpose()?,
    })
}

/// Convolution layer. Parameters: `weight` `[Cout, Cin/groups, kH, kW]` and
/// optionally `bias` `[Cout]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub pad: (usize, usize),
    pub groups: usize,
    state: LayerState,
    cache: Option<Tensor>,
}

impl Conv2d {
    /// Kaiming-uniform (fan-in) weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        pad: (usize, usize),
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let cin_g = in_channels / groups.max(1);
        let fan_in = (cin_g * kernel.0 * kernel.1).max(1) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Tensor::random_uniform(&[out_channels, cin_g, kernel.0, kernel.1], -bound, bound, rng);
        Self::from_weights(weight, bias.then(|| Tensor::zeros(&[out_channels])), pad, groups)
    }

    pub fn from_weights(weight: Tensor, bias: Option<Tensor>, pad: (usize, usize), groups: usize) -> Self {
        let mut state = LayerState::default();
        state.add_param("weight", weight);
        if let Some(b) = bias {
            state.add_param("bias", b);
        }
        Self {
            pad,
            groups,
            state,
            cache: None,
        }
    }

    pub fn weight(&self) -> &Tensor {
        self.state.param("weight")
    }
}

impl Module for Conv2d {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = conv2d_grouped(
            input,
            self.state.param("weight"),
            self.state.params.get("bias"),
            self.pad,
            self.groups,
        )?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Numeric("conv2d backward called before forward".into()))?;
        let with_bias = self.state.params.contains_key("bias");
        let grads = conv2d_backward(
            input,
            self.state.param("weight"),
            with_bias,
            self.pad,
            self.groups,
            grad_output,
        )?;
        self.state.set_grad("weight", grads.kernels);
        if let Some(b) = grads.bias {
            self.state.set_grad("bias", b);
        }
        Ok(grads.input)
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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Six nested loops straight from the definition.
    fn naive_conv(input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>, pad: (usize, usize), groups: usize) -> Tensor {
        let [n, cin, h, w] = input.dims4("input").unwrap();
        let [cout, cin_g, kh, kw] = kernels.dims4("kernels").unwrap();
        let (ph, pw) = pad;
        let (oh, ow) = (h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
        let cout_g = cout / groups;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for b in 0..n {
            for co in 0..cout {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias.map_or(0.0, |t| t.values()[co]);
                        for cg in 0..cin_g {
                            let ci = (co / cout_g) * cin_g + cg;
                            for i in 0..kh {
                                for j in 0..kw {
                                    let (r, c) = (y as isize + i as isize - ph as isize, x as isize + j as isize - pw as isize);
                                    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                        continue;
                                    }
                                    acc += input.values()[((b * cin + ci) * h + r as usize) * w + c as usize]
                                        * kernels.values()[((co * cin_g + cg) * kh + i) * kw + j];
                                }
                            }
                        }
                        out.values_mut()[((b * cout + co) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn hand_computed_cross_correlation() {
        let input = Tensor::new(vec![1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        let out = conv2d(&input, &kernel, None, (0, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 2]);
        assert_eq!(out.values(), &[6., 8.]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::random_uniform(&[2, 1, 3, 5], -1.0, 1.0, &mut rng);
        let kernel = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&input, &kernel, None, (0, 0)).unwrap(), input);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (pad, groups) in [((0, 0), 1), ((1, 2), 1), ((0, 1), 2)] {
            let input = Tensor::random_uniform(&[1, 2, 4, 8], -1.0, 1.0, &mut rng);
            let kernel = Tensor::random_uniform(&[4, 2 / groups, 2, 3], -1.0, 1.0, &mut rng);
            let bias = Tensor::random_uniform(&[4], -1.0, 1.0, &mut rng);
            let fast = conv2d_grouped(&input, &kernel, Some(&bias), pad, groups).unwrap();
            let slow = naive_conv(&input, &kernel, Some(&bias), pad, groups);
            assert!(fast.max_abs_diff(&slow) <= 1e-12);
        }
        let input = Tensor::random_uniform(&[1, 2, 4, 8], -1.0, 1.0, &mut rng);
        let kernel = Tensor::random_uniform(&[3, 2, 2, 3], -1.0, 1.0, &mut rng);
        let fast = conv2d(&input, &kernel, None, (0, 0)).unwrap();
        assert!(fast.max_abs_diff(&naive_conv(&input, &kernel, None, (0, 0), 1)) <= 1e-12);
    }

    #[test]
    fn oversized_kernel_names_axis() {
        let input = Tensor::zeros(&[1, 1, 2, 3]);
        let kernel = Tensor::zeros(&[1, 1, 3, 1]);
        let err = conv2d(&input, &kernel, None, (0, 0)).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "height", .. }));
        let kernel = Tensor::zeros(&[1, 2, 1, 1]);
        let err = conv2d(&input, &kernel, None, (0, 0)).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "in_channels", .. }));
    }
}
