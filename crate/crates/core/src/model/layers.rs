//! Minimal CNN layers with explicit forward caches and hand-written
//! backward passes. Convolutions run as batched im2col + matrix multiply.

use ndarray::{Array1, Array2, Array4};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A parameter tensor paired with its gradient, for optimizer visitation.
pub struct ParamGrad<'a> {
    pub param: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// (out_ch, in_ch * kernel * kernel)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

pub struct ConvCache {
    cols: Array2<f64>,
    input_dims: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid init scale");
        let weight =
            Array2::from_shape_fn((out_ch, in_ch * kernel * kernel), |_| normal.sample(rng));
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight,
            bias: Array1::zeros(out_ch),
            grad_weight: Array2::zeros((out_ch, in_ch * kernel * kernel)),
            grad_bias: Array1::zeros(out_ch),
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, ConvCache) {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let (ho, wo) = self.out_hw(h, w);
        let cols = im2col(x, self.kernel, self.stride, self.pad, ho, wo);
        let y2d = self.weight.dot(&cols);
        let mut y = Array4::zeros((n, self.out_ch, ho, wo));
        {
            let y_flat = y.as_slice_mut().expect("contiguous");
            let y2d_flat = y2d.as_slice().expect("contiguous");
            let spatial = ho * wo;
            let row_len = n * spatial;
            for o in 0..self.out_ch {
                let b = self.bias[o];
                for ni in 0..n {
                    let src =
                        &y2d_flat[o * row_len + ni * spatial..o * row_len + (ni + 1) * spatial];
                    let dst_off = ni * self.out_ch * spatial + o * spatial;
                    for (d, &s) in y_flat[dst_off..dst_off + spatial].iter_mut().zip(src) {
                        *d = s + b;
                    }
                }
            }
        }
        (y, ConvCache { cols, input_dims: (n, c, h, w), out_hw: (ho, wo) })
    }

    /// Backward pass. Accumulates parameter gradients when `accumulate` and
    /// returns the input gradient when `want_input_grad`.
    pub fn backward(
        &mut self,
        cache: &ConvCache,
        grad_out: &Array4<f64>,
        accumulate: bool,
        want_input_grad: bool,
    ) -> Option<Array4<f64>> {
        let (n, _, _, _) = cache.input_dims;
        let (ho, wo) = cache.out_hw;
        let spatial = ho * wo;
        // reshuffle (n, out, ho, wo) -> (out, n*ho*wo)
        let mut gy2d = Array2::zeros((self.out_ch, n * spatial));
        {
            let src = grad_out.as_slice().expect("contiguous");
            let dst = gy2d.as_slice_mut().expect("contiguous");
            for ni in 0..n {
                for o in 0..self.out_ch {
                    let s = &src[ni * self.out_ch * spatial + o * spatial..][..spatial];
                    let doff = o * n * spatial + ni * spatial;
                    dst[doff..doff + spatial].copy_from_slice(s);
                }
            }
        }
        if accumulate {
            self.grad_weight += &gy2d.dot(&cache.cols.t());
            self.grad_bias += &gy2d.sum_axis(ndarray::Axis(1));
        }
        if want_input_grad {
            let gcols = self.weight.t().dot(&gy2d);
            Some(col2im(&gcols, cache.input_dims, self.kernel, self.stride, self.pad, ho, wo))
        } else {
            None
        }
    }

    /// Input gradient only; parameter gradients stay untouched.
    pub fn backward_input(&self, cache: &ConvCache, grad_out: &Array4<f64>) -> Array4<f64> {
        let (n, _, _, _) = cache.input_dims;
        let (ho, wo) = cache.out_hw;
        let spatial = ho * wo;
        let mut gy2d = Array2::zeros((self.out_ch, n * spatial));
        {
            let src = grad_out.as_slice().expect("contiguous");
            let dst = gy2d.as_slice_mut().expect("contiguous");
            for ni in 0..n {
                for o in 0..self.out_ch {
                    let s = &src[ni * self.out_ch * spatial + o * spatial..][..spatial];
                    let doff = o * n * spatial + ni * spatial;
                    dst[doff..doff + spatial].copy_from_slice(s);
                }
            }
        }
        let gcols = self.weight.t().dot(&gy2d);
        col2im(&gcols, cache.input_dims, self.kernel, self.stride, self.pad, ho, wo)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn param_grads(&mut self) -> Vec<ParamGrad<'_>> {
        vec![
            ParamGrad {
                param: self.weight.as_slice_mut().expect("contiguous"),
                grad: self.grad_weight.as_slice().expect("contiguous"),
            },
            ParamGrad {
                param: self.bias.as_slice_mut().expect("contiguous"),
                grad: self.grad_bias.as_slice().expect("contiguous"),
            },
        ]
    }
}

fn im2col(
    x: &Array4<f64>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, n * ho * wo));
    let x_flat = x.as_slice().expect("contiguous");
    let cols_flat = cols.as_slice_mut().expect("contiguous");
    let col_width = n * ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_off = row * col_width;
                for ni in 0..n {
                    let img_off = (ni * c + ci) * h * w;
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        let dst_off = row_off + (ni * ho + oh) * wo;
                        if ih < 0 || ih >= h as isize {
                            continue; // zero padding rows stay zero
                        }
                        let src_row = img_off + ih as usize * w;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                cols_flat[dst_off + ow] = x_flat[src_row + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    gcols: &Array2<f64>,
    input_dims: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array4<f64> {
    let (n, c, h, w) = input_dims;
    let mut gx = Array4::zeros((n, c, h, w));
    let gx_flat = gx.as_slice_mut().expect("contiguous");
    let gcols_flat = gcols.as_slice().expect("contiguous");
    let col_width = n * ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let row_off = row * col_width;
                for ni in 0..n {
                    let img_off = (ni * c + ci) * h * w;
                    for oh in 0..ho {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = img_off + ih as usize * w;
                        let src_off = row_off + (ni * ho + oh) * wo;
                        for ow in 0..wo {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                gx_flat[dst_row + iw as usize] += gcols_flat[src_off + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// ReLU; the forward output doubles as the backward mask.
pub fn relu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(grad_out: &Array4<f64>, forward_out: &Array4<f64>) -> Array4<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(forward_out, |gv, &y| {
        if y <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Global average pool (N, C, H, W) -> (N, C).
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n, c));
    let scale = 1.0 / (h * w) as f64;
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0;
            for hi in 0..h {
                for wi in 0..w {
                    acc += x[[ni, ci, hi, wi]];
                }
            }
            out[[ni, ci]] = acc * scale;
        }
    }
    out
}

pub fn global_avg_pool_backward(
    grad_out: &Array2<f64>,
    dims: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (n, c, h, w) = dims;
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(ni, ci, _, _)| grad_out[[ni, ci]] * scale)
}

/// Bias-free linear map used as the growing classifier head.
#[derive(Debug, Clone)]
pub struct Linear {
    /// (out, in)
    pub weight: Array2<f64>,
    pub grad_weight: Array2<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            grad_weight: Array2::zeros((out_dim, in_dim)),
        }
    }

    pub fn forward(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.weight.t())
    }

    pub fn backward(
        &mut self,
        z: &Array2<f64>,
        grad_out: &Array2<f64>,
        accumulate: bool,
    ) -> Array2<f64> {
        if accumulate {
            self.grad_weight += &grad_out.t().dot(z);
        }
        grad_out.dot(&self.weight)
    }

    pub fn backward_input(&self, grad_out: &Array2<f64>) -> Array2<f64> {
        grad_out.dot(&self.weight)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len()
    }

    pub fn param_grads(&mut self) -> Vec<ParamGrad<'_>> {
        vec![ParamGrad {
            param: self.weight.as_slice_mut().expect("contiguous"),
            grad: self.grad_weight.as_slice().expect("contiguous"),
        }]
    }
}

/// Corner-aligned bilinear interpolation taps along one axis.
fn axis_taps(out_n: usize, in_n: usize) -> Vec<(usize, usize, f64)> {
    (0..out_n)
        .map(|i| {
            let pos = if out_n == 1 {
                (in_n as f64 - 1.0) / 2.0
            } else {
                i as f64 * (in_n as f64 - 1.0) / (out_n as f64 - 1.0)
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(in_n - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize of a feature block to (oh, ow), corner-aligned.
pub fn bilinear_resize(x: &Array4<f64>, oh: usize, ow: usize) -> Array4<f64> {
    let (_, _, h, w) = x.dim();
    let rows = axis_taps(oh, h);
    let cols = axis_taps(ow, w);
    let (n, c, _, _) = x.dim();
    Array4::from_shape_fn((n, c, oh, ow), |(ni, ci, i, j)| {
        let (r0, r1, fr) = rows[i];
        let (c0, c1, fc) = cols[j];
        let top = x[[ni, ci, r0, c0]] * (1.0 - fc) + x[[ni, ci, r0, c1]] * fc;
        let bot = x[[ni, ci, r1, c0]] * (1.0 - fc) + x[[ni, ci, r1, c1]] * fc;
        top * (1.0 - fr) + bot * fr
    })
}

/// Transpose of [`bilinear_resize`]: scatter output gradients back with the
/// same interpolation weights.
pub fn bilinear_resize_backward(
    grad_out: &Array4<f64>,
    in_dims: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (n, c, h, w) = in_dims;
    let (_, _, oh, ow) = grad_out.dim();
    let rows = axis_taps(oh, h);
    let cols = axis_taps(ow, w);
    let mut gx = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                let (r0, r1, fr) = rows[i];
                for j in 0..ow {
                    let (c0, c1, fc) = cols[j];
                    let g = grad_out[[ni, ci, i, j]];
                    gx[[ni, ci, r0, c0]] += g * (1.0 - fr) * (1.0 - fc);
                    gx[[ni, ci, r0, c1]] += g * (1.0 - fr) * fc;
                    gx[[ni, ci, r1, c0]] += g * fr * (1.0 - fc);
                    gx[[ni, ci, r1, c1]] += g * fr * fc;
                }
            }
        }
    }
    gx
}

pub fn sigmoid(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(grad_out: &Array4<f64>, forward_out: &Array4<f64>) -> Array4<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(forward_out, |gv, &y| *gv *= y * (1.0 - y));
    g
}
