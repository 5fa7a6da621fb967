//! Batched layer primitives with explicit backward passes.
//!
//! Convolutions are lowered to `im2col` + SGEMM per sample. Samples are
//! processed in parallel, and every cross-sample reduction runs sequentially
//! in batch order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `c (m×n) = a·b + beta·c` on row-major slices; `*_t` reads the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvGeom {
    pub fn square(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: (k, k),
            stride: (stride, stride),
            pad: (pad, pad),
            dilation: (1, 1),
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let span = |n: usize, k: usize, s: usize, p: usize, d: usize| {
            let eff = d * (k - 1) + 1;
            (n + 2 * p).checked_sub(eff).map(|v| v / s + 1)
        };
        Some((
            span(h, self.kernel.0, self.stride.0, self.pad.0, self.dilation.0)?,
            span(w, self.kernel.1, self.stride.1, self.pad.1, self.dilation.1)?,
        ))
    }

    pub fn col_rows(&self) -> usize {
        self.in_ch * self.kernel.0 * self.kernel.1
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.col_rows()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }

    fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.out_size(h, w)
            .ok_or_else(|| Error::shape(format!("input {h}x{w} too small for {self:?}")))
    }
}

fn im2col(x: &[f32], h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, cols: &mut [f32]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = (g.pad.0 as isize, g.pad.1 as isize);
    let (dh, dw) = g.dilation;
    let hw_out = ho * wo;
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * sh + ki * dh) as isize - ph;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * sw + kj * dw) as isize - pw;
                        *d = if ix >= 0 && ix < w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]; accumulates into `x`.
fn col2im(cols: &[f32], h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, x: &mut [f32]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = (g.pad.0 as isize, g.pad.1 as isize);
    let (dh, dw) = g.dilation;
    let hw_out = ho * wo;
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * sh + ki * dh) as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, s) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * sw + kj * dw) as isize - pw;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn lower<'a>(x: &'a [f32], h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize) -> std::borrow::Cow<'a, [f32]> {
    if g.is_pointwise() {
        std::borrow::Cow::Borrowed(x)
    } else {
        let mut cols = vec![0.0; g.col_rows() * ho * wo];
        im2col(x, h, w, g, ho, wo, &mut cols);
        std::borrow::Cow::Owned(cols)
    }
}

/// Parameter gradients of one layer, summed over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn sum_in_order(parts: Vec<(Vec<f32>, Vec<f32>)>, wlen: usize, blen: usize) -> ParamGrads {
    let mut weight = vec![0.0; wlen];
    let mut bias = vec![0.0; blen];
    for (gw, gb) in parts {
        weight.iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
        bias.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
    }
    ParamGrads { weight, bias }
}

fn check_channels(x: &Tensor, expected: usize, what: &str) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::shape(format!(
            "{what} expects {expected} input channels, got {}",
            x.channels()
        )));
    }
    Ok(())
}

/// Convolution forward. `weight` is `(out, in, kh, kw)`.
pub fn conv2d(g: &ConvGeom, x: &Tensor, weight: &[f32], bias: &[f32]) -> Result<Tensor> {
    check_channels(x, g.in_ch, "convolution")?;
    let [n, _, h, w] = x.shape();
    let (ho, wo) = g.output_dims(h, w)?;
    let mut out = Tensor::zeros([n, g.out_ch, ho, wo]);
    let hw = ho * wo;
    let krows = g.col_rows();
    x.data()
        .par_chunks(x.sample_len())
        .zip(out.data_mut().par_chunks_mut(g.out_ch * hw))
        .for_each(|(xs, os)| {
            let cols = lower(xs, h, w, g, ho, wo);
            for (co, b) in bias.iter().enumerate() {
                os[co * hw..(co + 1) * hw].fill(*b);
            }
            gemm(g.out_ch, krows, hw, weight, false, &cols, false, os, 1.0);
        });
    Ok(out)
}

/// Convolution backward: `(grad_input, parameter grads)`.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &Tensor,
    weight: &[f32],
    grad_out: &Tensor,
) -> Result<(Tensor, ParamGrads)> {
    let [n, _, h, w] = x.shape();
    let (ho, wo) = g.output_dims(h, w)?;
    if grad_out.shape() != [n, g.out_ch, ho, wo] {
        return Err(Error::shape(format!(
            "convolution gradient {:?} does not match output {:?}",
            grad_out.shape(),
            [n, g.out_ch, ho, wo]
        )));
    }
    let hw = ho * wo;
    let krows = g.col_rows();
    let mut grad_x = Tensor::zeros(x.shape());
    let parts: Vec<(Vec<f32>, Vec<f32>)> = x
        .data()
        .par_chunks(x.sample_len())
        .zip(grad_out.data().par_chunks(g.out_ch * hw))
        .zip(grad_x.data_mut().par_chunks_mut(x.sample_len()))
        .map(|((xs, gs), gx)| {
            let cols = lower(xs, h, w, g, ho, wo);
            let mut gw = vec![0.0; g.weight_len()];
            gemm(g.out_ch, hw, krows, gs, false, &cols, true, &mut gw, 0.0);
            let gb = (0..g.out_ch)
                .map(|co| gs[co * hw..(co + 1) * hw].iter().sum())
                .collect();
            if g.is_pointwise() {
                gemm(krows, g.out_ch, hw, weight, true, gs, false, gx, 0.0);
            } else {
                let mut gcols = vec![0.0; krows * hw];
                gemm(krows, g.out_ch, hw, weight, true, gs, false, &mut gcols, 0.0);
                col2im(&gcols, h, w, g, ho, wo, gx);
            }
            (gw, gb)
        })
        .collect();
    Ok((grad_x, sum_in_order(parts, g.weight_len(), g.out_ch)))
}

/// A 3×3 stride-2 transposed convolution that exactly doubles height and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpGeom {
    pub in_ch: usize,
    pub out_ch: usize,
}

impl UpGeom {
    /// The forward convolution this layer is the transpose of (output → input).
    fn adjoint(&self) -> ConvGeom {
        ConvGeom::square(self.out_ch, self.in_ch, 3, 2, 1)
    }

    /// Weight layout `(in, out, 3, 3)`.
    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * 9
    }
}

pub fn conv_transpose2d(g: &UpGeom, x: &Tensor, weight: &[f32], bias: &[f32]) -> Result<Tensor> {
    check_channels(x, g.in_ch, "upsample")?;
    let [n, _, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    let adj = g.adjoint();
    let krows = adj.col_rows();
    let mut out = Tensor::zeros([n, g.out_ch, ho, wo]);
    x.data()
        .par_chunks(x.sample_len())
        .zip(out.data_mut().par_chunks_mut(g.out_ch * ho * wo))
        .for_each(|(xs, os)| {
            let mut cols = vec![0.0; krows * h * w];
            gemm(krows, g.in_ch, h * w, weight, true, xs, false, &mut cols, 0.0);
            col2im(&cols, ho, wo, &adj, h, w, os);
            for (co, b) in bias.iter().enumerate() {
                os[co * ho * wo..(co + 1) * ho * wo]
                    .iter_mut()
                    .for_each(|v| *v += b);
            }
        });
    Ok(out)
}

pub fn conv_transpose2d_backward(
    g: &UpGeom,
    x: &Tensor,
    weight: &[f32],
    grad_out: &Tensor,
) -> Result<(Tensor, ParamGrads)> {
    let [n, _, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    if grad_out.shape() != [n, g.out_ch, ho, wo] {
        return Err(Error::shape(format!(
            "upsample gradient {:?} does not match output {:?}",
            grad_out.shape(),
            [n, g.out_ch, ho, wo]
        )));
    }
    let adj = g.adjoint();
    let krows = adj.col_rows();
    let mut grad_x = Tensor::zeros(x.shape());
    let parts: Vec<(Vec<f32>, Vec<f32>)> = x
        .data()
        .par_chunks(x.sample_len())
        .zip(grad_out.data().par_chunks(g.out_ch * ho * wo))
        .zip(grad_x.data_mut().par_chunks_mut(x.sample_len()))
        .map(|((xs, gs), gx)| {
            let mut cols = vec![0.0; krows * h * w];
            im2col(gs, ho, wo, &adj, h, w, &mut cols);
            gemm(g.in_ch, krows, h * w, weight, false, &cols, false, gx, 0.0);
            let mut gw = vec![0.0; g.weight_len()];
            gemm(g.in_ch, h * w, krows, xs, false, &cols, true, &mut gw, 0.0);
            let gb = (0..g.out_ch)
                .map(|co| gs[co * ho * wo..(co + 1) * ho * wo].iter().sum())
                .collect();
            (gw, gb)
        })
        .collect();
    Ok((grad_x, sum_in_order(parts, g.weight_len(), g.out_ch)))
}

/// 2×2 max pooling; also returns the flat in-plane argmax of every output.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = plane * ho * wo + oy * wo + ox;
                out.data_mut()[o] = src[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(input_shape: [usize; 4], argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let [_, _, h, w] = input_shape;
    let hw_out = grad_out.height() * grad_out.width();
    let mut grad = Tensor::zeros(input_shape);
    for (o, g) in grad_out.data().iter().enumerate() {
        let plane = o / hw_out;
        grad.data_mut()[plane * h * w + argmax[o] as usize] += g;
    }
    grad
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `grad` wherever the post-activation value is not positive.
pub fn relu_backward(grad: &mut Tensor, activated: &Tensor) {
    grad.data_mut()
        .iter_mut()
        .zip(activated.data())
        .for_each(|(g, a)| {
            if *a <= 0.0 {
                *g = 0.0
            }
        });
}

pub fn add_inplace(a: &mut Tensor, b: &Tensor) {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
}

/// Concatenates two batches along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.shape();
    if b.batch() != n || b.height() != h || b.width() != w {
        return Err(Error::shape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let cb = b.channels();
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Inverse of [`concat_channels`] for a split after `first` channels.
pub fn split_channels(t: &Tensor, first: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = t.shape();
    let hw = h * w;
    let mut a = Vec::with_capacity(n * first * hw);
    let mut b = Vec::with_capacity(n * (c - first) * hw);
    for i in 0..n {
        let s = t.sample(i);
        a.extend_from_slice(&s[..first * hw]);
        b.extend_from_slice(&s[first * hw..]);
    }
    (
        Tensor::from_vec([n, first, h, w], a).expect("sizes derived from input"),
        Tensor::from_vec([n, c - first, h, w], b).expect("sizes derived from input"),
    )
}

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f32 = 0.1;

/// What batch normalization keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    /// Unbiased batch variance, used for the running estimate.
    pub batch_var: Vec<f32>,
}

/// Per-channel normalization with batch statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &[f32], beta: &[f32]) -> (Tensor, NormCache) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut normalized = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = vec![0.0; c];
    let mut batch_mean = vec![0.0; c];
    let mut batch_var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0f64;
        for i in 0..n {
            sum += x.plane(i, ch).iter().map(|v| *v as f64).sum::<f64>();
        }
        let mean = sum / count;
        let mut ss = 0.0f64;
        for i in 0..n {
            ss += x
                .plane(i, ch)
                .iter()
                .map(|v| (*v as f64 - mean).powi(2))
                .sum::<f64>();
        }
        let var = ss / count;
        let istd = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[ch] = istd as f32;
        batch_mean[ch] = mean as f32;
        batch_var[ch] = if count > 1.0 { (ss / (count - 1.0)) as f32 } else { 0.0 };
        for i in 0..n {
            let start = (i * c + ch) * hw;
            for k in 0..hw {
                let xh = ((x.data()[start + k] as f64 - mean) * istd) as f32;
                normalized.data_mut()[start + k] = xh;
                out.data_mut()[start + k] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
            batch_mean,
            batch_var,
        },
    )
}

/// Normalization with fixed running statistics.
pub fn batch_norm_eval(x: &Tensor, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32]) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] as f64 + NORM_EPS).sqrt() as f32;
            let shift = beta[ch] - mean[ch] * scale;
            let start = (i * c + ch) * hw;
            out.data_mut()[start..start + hw]
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

pub fn batch_norm_backward(cache: &NormCache, gamma: &[f32], grad_out: &Tensor) -> (Tensor, ParamGrads) {
    let [n, c, h, w] = grad_out.shape();
    let hw = h * w;
    let count = (n * hw) as f64;
    let xh = &cache.normalized;
    let mut grad_x = Tensor::zeros(grad_out.shape());
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for i in 0..n {
            for (g, x) in grad_out.plane(i, ch).iter().zip(xh.plane(i, ch)) {
                sg += *g as f64;
                sgx += (*g as f64) * (*x as f64);
            }
        }
        g_gamma[ch] = sgx as f32;
        g_beta[ch] = sg as f32;
        let k = gamma[ch] as f64 * cache.inv_std[ch] as f64 / count;
        for i in 0..n {
            let start = (i * c + ch) * hw;
            for j in 0..hw {
                let g = grad_out.data()[start + j] as f64;
                let x = xh.data()[start + j] as f64;
                grad_x.data_mut()[start + j] = (k * (count * g - sg - x * sgx)) as f32;
            }
        }
    }
    (
        grad_x,
        ParamGrads {
            weight: g_gamma,
            bias: g_beta,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(g: &ConvGeom, x: &Tensor, weight: &[f32], bias: &[f32]) -> Tensor {
        let [n, _, h, w] = x.shape();
        let (ho, wo) = g.out_size(h, w).unwrap();
        let (kh, kw) = g.kernel;
        let mut out = Tensor::zeros([n, g.out_ch, ho, wo]);
        for b in 0..n {
            for co in 0..g.out_ch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias[co];
                        for ci in 0..g.in_ch {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * g.stride.0 + ki * g.dilation.0) as isize - g.pad.0 as isize;
                                    let ix = (ox * g.stride.1 + kj * g.dilation.1) as isize - g.pad.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = weight[((co * g.in_ch + ci) * kh + ki) * kw + kj];
                                    acc += wv * x.plane(b, ci)[iy as usize * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((b * g.out_ch + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(len: usize, scale: f32) -> Vec<f32> {
        (0..len).map(|i| ((i * 37 % 23) as f32 - 11.0) * scale).collect()
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let geoms = [
            ConvGeom::square(2, 3, 3, 1, 1),
            ConvGeom::square(2, 3, 3, 2, 1),
            ConvGeom::square(3, 2, 1, 1, 0),
            ConvGeom {
                in_ch: 2,
                out_ch: 2,
                kernel: (3, 1),
                stride: (1, 1),
                pad: (2, 0),
                dilation: (2, 1),
            },
            ConvGeom {
                in_ch: 2,
                out_ch: 2,
                kernel: (1, 3),
                stride: (1, 1),
                pad: (0, 4),
                dilation: (1, 4),
            },
        ];
        for g in geoms {
            let x = Tensor::from_vec([2, g.in_ch, 6, 5], ramp(2 * g.in_ch * 30, 0.1)).unwrap();
            let wgt = ramp(g.weight_len(), 0.05);
            let b: Vec<f32> = (0..g.out_ch).map(|i| i as f32 * 0.3).collect();
            let fast = conv2d(&g, &x, &wgt, &b).unwrap();
            let slow = direct_conv(&g, &x, &wgt, &b);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-5, "{g:?}");
            }
        }
    }

    #[test]
    fn transposed_conv_doubles_and_is_adjoint() {
        // <conv_t(x), y> == <x, conv(y)> with shared weights and zero bias
        let g = UpGeom { in_ch: 3, out_ch: 2 };
        let x = Tensor::from_vec([1, 3, 4, 5], ramp(60, 0.1)).unwrap();
        let y = Tensor::from_vec([1, 2, 8, 10], ramp(160, 0.07)).unwrap();
        let wgt = ramp(g.weight_len(), 0.05);
        let up = conv_transpose2d(&g, &x, &wgt, &[0.0, 0.0]).unwrap();
        assert_eq!(up.shape(), [1, 2, 8, 10]);
        let down = conv2d(&g.adjoint(), &y, &wgt, &[0.0; 3]).unwrap();
        assert_eq!(down.shape(), x.shape());
        let lhs: f32 = up.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec([1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 1.]).unwrap();
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data(), &[5., 9.]);
        let g = max_pool2_backward(x.shape(), &arg, &Tensor::from_vec([1, 1, 1, 2], vec![1., 2.]).unwrap());
        assert_eq!(g.data(), &[0., 1., 0., 0., 0., 0., 2., 0.]);
    }

    #[test]
    fn batch_norm_output_is_standardized() {
        let x = Tensor::from_vec([2, 2, 2, 2], ramp(16, 0.5)).unwrap();
        let (y, cache) = batch_norm_train(&x, &[1.0, 2.0], &[0.0, 1.0]);
        for ch in 0..2 {
            let vals: Vec<f32> = (0..2).flat_map(|i| cache.normalized.plane(i, ch).to_vec()).collect();
            let mean: f32 = vals.iter().sum::<f32>() / 8.0;
            assert!(mean.abs() < 1e-5);
        }
        let out1: Vec<f32> = (0..2).flat_map(|i| y.plane(i, 1).to_vec()).collect();
        assert!((out1.iter().sum::<f32>() / 8.0 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::from_vec([2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        let (a2, b2) = split_channels(&c, 1);
        assert_eq!((a2, b2), (a, b));
    }
}
