//! Convolution and transposed convolution.
//!
//! Both layers lower the spatial gather to an im2col matrix and run a
//! single batched matrix product per call (matrixmultiply by default,
//! BLAS behind the `blas` feature). The transposed convolution is the
//! exact adjoint of the convolution with the same kernel size, stride
//! and padding, sharing the same weight layout `(c_in, c_out, k, k)`
//! up to the role swap of the first two axes.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::{Param, Tensor4};
use crate::{Error, Result};

/// Standard deviation for Gaussian weight init.
pub(crate) const INIT_STD: f64 = 0.02;

fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = input + 2 * pad;
    if span < k {
        return Err(Error::Shape(format!(
            "convolution kernel {k} does not fit input {input} with padding {pad}"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Gathers every kernel window into a row: output is
/// `(n * gh * gw, c * k * k)` where `(gh, gw)` is the window grid.
fn im2col_batch(
    x: &Tensor4,
    k: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let ckk = c * k * k;
    let mut col = Array2::<f64>::zeros((n * gh * gw, ckk));
    col.axis_chunks_iter_mut(Axis(0), gh * gw)
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut block, xn)| {
            let xs = xn.to_slice().expect("standard layout");
            let dst = block.as_slice_mut().expect("row chunk is contiguous");
            im2col_sample(xs, c, h, w, k, stride, pad, gh, gw, dst);
        });
    col
}

#[allow(clippy::too_many_arguments)]
fn im2col_sample(
    xs: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
    dst: &mut [f64],
) {
    let ckk = c * k * k;
    let mut row_base = 0usize;
    for g_i in 0..gh {
        let ih0 = (g_i * stride) as isize - pad as isize;
        for g_j in 0..gw {
            let iw0 = (g_j * stride) as isize - pad as isize;
            let dst_row = &mut dst[row_base..row_base + ckk];
            row_base += ckk;
            let mut idx = 0usize;
            for ci in 0..c {
                let xc = &xs[ci * h * w..(ci + 1) * h * w];
                for kh in 0..k {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= h as isize {
                        dst_row[idx..idx + k].fill(0.0);
                        idx += k;
                        continue;
                    }
                    let xrow = &xc[ih as usize * w..ih as usize * w + w];
                    for kw in 0..k {
                        let iw = iw0 + kw as isize;
                        dst_row[idx] = if iw >= 0 && (iw as usize) < w {
                            xrow[iw as usize]
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_batch`]: scatter-adds rows back onto the
/// `(n, c, th, tw)` image the windows were read from.
#[allow(clippy::too_many_arguments)]
fn col2im_batch(
    col: &Array2<f64>,
    n: usize,
    c: usize,
    th: usize,
    tw: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
) -> Tensor4 {
    let mut out = Tensor4::zeros((n, c, th, tw));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(col.axis_chunks_iter(Axis(0), gh * gw).into_par_iter())
        .for_each(|(mut on, block)| {
            let dst = on.as_slice_mut().expect("standard layout");
            let src = block.to_slice().expect("row chunk is contiguous");
            col2im_sample(src, c, th, tw, k, stride, pad, gh, gw, dst);
        });
    out
}

#[allow(clippy::too_many_arguments)]
fn col2im_sample(
    src: &[f64],
    c: usize,
    th: usize,
    tw: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
    dst: &mut [f64],
) {
    let ckk = c * k * k;
    let mut row_base = 0usize;
    for g_i in 0..gh {
        let ih0 = (g_i * stride) as isize - pad as isize;
        for g_j in 0..gw {
            let iw0 = (g_j * stride) as isize - pad as isize;
            let src_row = &src[row_base..row_base + ckk];
            row_base += ckk;
            let mut idx = 0usize;
            for ci in 0..c {
                let base = ci * th * tw;
                for kh in 0..k {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= th as isize {
                        idx += k;
                        continue;
                    }
                    let drow = ih as usize * tw;
                    for kw in 0..k {
                        let iw = iw0 + kw as isize;
                        if iw >= 0 && (iw as usize) < tw {
                            dst[base + drow + iw as usize] += src_row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Copies `(n, c, h, w)` into channel-last rows `(n * h * w, c)`.
fn tensor_to_rows(t: &Tensor4) -> Array2<f64> {
    let (n, c, h, w) = t.dim();
    let hw = h * w;
    let ts = t.as_slice().expect("standard layout");
    let mut mat = Array2::<f64>::zeros((n * hw, c));
    let ms = mat.as_slice_mut().expect("standard layout");
    for ni in 0..n {
        for f in 0..c {
            let src = &ts[(ni * c + f) * hw..(ni * c + f + 1) * hw];
            let mut pos = (ni * hw) * c + f;
            for &v in src {
                ms[pos] = v;
                pos += c;
            }
        }
    }
    mat
}

/// Inverse of [`tensor_to_rows`], optionally adding a per-channel bias.
fn rows_to_tensor(mat: &Array2<f64>, n: usize, c: usize, h: usize, w: usize, bias: Option<&[f64]>) -> Tensor4 {
    let hw = h * w;
    let ms = mat.as_slice().expect("standard layout");
    let mut out = Tensor4::zeros((n, c, h, w));
    let os = out.as_slice_mut().expect("standard layout");
    for ni in 0..n {
        for f in 0..c {
            let shift = bias.map_or(0.0, |b| b[f]);
            let dst = &mut os[(ni * c + f) * hw..(ni * c + f + 1) * hw];
            let mut pos = (ni * hw) * c + f;
            for d in dst.iter_mut() {
                *d = ms[pos] + shift;
                pos += c;
            }
        }
    }
    out
}

fn param_as_mat(p: &Param, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), p.value.as_slice().expect("standard layout"))
        .expect("parameter has the layer's shape")
}

fn grad_as_mat(p: &mut Param, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), p.grad.as_slice_mut().expect("standard layout"))
        .expect("parameter has the layer's shape")
}

fn accumulate_bias_grad(b: &mut Param, dy: &Tensor4) {
    let (n, c, h, w) = dy.dim();
    let hw = h * w;
    let ds = dy.as_slice().expect("standard layout");
    let bs = b.grad.as_slice_mut().expect("standard layout");
    for ni in 0..n {
        for f in 0..c {
            let mut acc = 0.0;
            for &v in &ds[(ni * c + f) * hw..(ni * c + f + 1) * hw] {
                acc += v;
            }
            bs[f] += acc;
        }
    }
}

/// 2-D convolution (cross-correlation) with a square kernel, uniform
/// stride and symmetric zero padding. Weights are `(c_out, c_in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub b: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// State captured by [`Conv2d::forward`] for the backward pass. Holds
/// the im2col matrix so backward passes never regather the input.
pub struct Conv2dCache {
    col: Array2<f64>,
    n: usize,
    h: usize,
    w: usize,
    gh: usize,
    gw: usize,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(c_in > 0 && c_out > 0 && k > 0 && stride > 0);
        Conv2d {
            w: Param::zeros(&[c_out, c_in, k, k]),
            b: Param::zeros(&[c_out]),
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    /// Gaussian weights (std 0.02) and zero biases.
    pub fn init_dcgan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.w = Param::gaussian(rng, &[self.c_out, self.c_in, self.k, self.k], 0.0, INIT_STD);
        self.b = Param::zeros(&[self.c_out]);
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_out_size(h, self.k, self.stride, self.pad)?,
            conv_out_size(w, self.k, self.stride, self.pad)?,
        ))
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (n, c, _, _) = x.dim();
        if n == 0 {
            return Err(Error::InvalidInput("conv2d: empty batch".into()));
        }
        if c != self.c_in {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {c}",
                self.c_in
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, Conv2dCache)> {
        self.check_input(x)?;
        let (n, _, h, w) = x.dim();
        let (gh, gw) = self.out_size(h, w)?;
        let ckk = self.c_in * self.k * self.k;
        let col = im2col_batch(x, self.k, self.stride, self.pad, gh, gw);
        let w_mat = param_as_mat(&self.w, self.c_out, ckk);
        let mut out_mat = Array2::<f64>::zeros((n * gh * gw, self.c_out));
        general_mat_mul(1.0, &col, &w_mat.t(), 0.0, &mut out_mat);
        let bias = self.b.value.as_slice().expect("standard layout");
        let out = rows_to_tensor(&out_mat, n, self.c_out, gh, gw, Some(bias));
        Ok((out, Conv2dCache { col, n, h, w, gh, gw }))
    }

    fn check_upstream(&self, cache: &Conv2dCache, dy: &Tensor4) -> Result<()> {
        let expect = (cache.n, self.c_out, cache.gh, cache.gw);
        if dy.dim() != expect {
            return Err(Error::Shape(format!(
                "conv2d backward expects {:?}, got {:?}",
                expect,
                dy.dim()
            )));
        }
        Ok(())
    }

    /// Accumulates weight and bias gradients and returns the input
    /// gradient. Call [`Param::zero_grad`] between optimizer steps.
    pub fn backward(&mut self, cache: &Conv2dCache, dy: &Tensor4) -> Result<Tensor4> {
        self.check_upstream(cache, dy)?;
        let ckk = self.c_in * self.k * self.k;
        let dy_mat = tensor_to_rows(dy);
        {
            let mut dw = grad_as_mat(&mut self.w, self.c_out, ckk);
            general_mat_mul(1.0, &dy_mat.t(), &cache.col, 1.0, &mut dw);
        }
        accumulate_bias_grad(&mut self.b, dy);
        self.input_grad(cache, &dy_mat)
    }

    /// Input gradient only, leaving the parameter gradients untouched.
    /// Used where the layer acts as a frozen function.
    pub fn backward_input(&self, cache: &Conv2dCache, dy: &Tensor4) -> Result<Tensor4> {
        self.check_upstream(cache, dy)?;
        self.input_grad(cache, &tensor_to_rows(dy))
    }

    fn input_grad(&self, cache: &Conv2dCache, dy_mat: &Array2<f64>) -> Result<Tensor4> {
        let ckk = self.c_in * self.k * self.k;
        let w_mat = param_as_mat(&self.w, self.c_out, ckk);
        let mut dcol = Array2::<f64>::zeros((cache.n * cache.gh * cache.gw, ckk));
        general_mat_mul(1.0, dy_mat, &w_mat, 0.0, &mut dcol);
        Ok(col2im_batch(
            &dcol, cache.n, self.c_in, cache.h, cache.w, self.k, self.stride, self.pad, cache.gh,
            cache.gw,
        ))
    }
}

/// Transposed 2-D convolution: the exact adjoint of [`Conv2d`] with the
/// same kernel size, stride and padding. Weights are `(c_in, c_out, k, k)`;
/// output spatial size is `(input - 1) * stride - 2 * pad + k`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: Param,
    pub b: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// State captured by [`ConvTranspose2d::forward`] for the backward
/// pass. Holds the channel-last input rows so backward reuses them.
pub struct ConvTranspose2dCache {
    x_mat: Array2<f64>,
    n: usize,
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
}

impl ConvTranspose2d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(c_in > 0 && c_out > 0 && k > 0 && stride > 0);
        ConvTranspose2d {
            w: Param::zeros(&[c_in, c_out, k, k]),
            b: Param::zeros(&[c_out]),
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    /// Gaussian weights (std 0.02) and zero biases.
    pub fn init_dcgan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.w = Param::gaussian(rng, &[self.c_in, self.c_out, self.k, self.k], 0.0, INIT_STD);
        self.b = Param::zeros(&[self.c_out]);
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let grow = |input: usize| -> Result<usize> {
            let reach = (input - 1) * self.stride + self.k;
            if reach <= 2 * self.pad {
                return Err(Error::Shape(format!(
                    "conv_transpose2d output collapses: input {input}, kernel {}, stride {}, padding {}",
                    self.k, self.stride, self.pad
                )));
            }
            Ok(reach - 2 * self.pad)
        };
        Ok((grow(h)?, grow(w)?))
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (n, c, _, _) = x.dim();
        if n == 0 {
            return Err(Error::InvalidInput("conv_transpose2d: empty batch".into()));
        }
        if c != self.c_in {
            return Err(Error::Shape(format!(
                "conv_transpose2d expects {} input channels, got {c}",
                self.c_in
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, ConvTranspose2dCache)> {
        self.check_input(x)?;
        let (n, _, h, w) = x.dim();
        let (th, tw) = self.out_size(h, w)?;
        let cokk = self.c_out * self.k * self.k;
        let x_mat = tensor_to_rows(x);
        let w_mat = param_as_mat(&self.w, self.c_in, cokk);
        let mut col = Array2::<f64>::zeros((n * h * w, cokk));
        general_mat_mul(1.0, &x_mat, &w_mat, 0.0, &mut col);
        let mut out = col2im_batch(&col, n, self.c_out, th, tw, self.k, self.stride, self.pad, h, w);
        let bias = self.b.value.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout");
        let spatial = th * tw;
        for ni in 0..n {
            for (f, &shift) in bias.iter().enumerate() {
                for v in &mut os[(ni * self.c_out + f) * spatial..(ni * self.c_out + f + 1) * spatial] {
                    *v += shift;
                }
            }
        }
        Ok((out, ConvTranspose2dCache { x_mat, n, h, w, th, tw }))
    }

    /// Accumulates weight and bias gradients and returns the input
    /// gradient. Call [`Param::zero_grad`] between optimizer steps.
    pub fn backward(&mut self, cache: &ConvTranspose2dCache, dy: &Tensor4) -> Result<Tensor4> {
        let expect = (cache.n, self.c_out, cache.th, cache.tw);
        if dy.dim() != expect {
            return Err(Error::Shape(format!(
                "conv_transpose2d backward expects {:?}, got {:?}",
                expect,
                dy.dim()
            )));
        }
        let (n, h, w) = (cache.n, cache.h, cache.w);
        let cokk = self.c_out * self.k * self.k;
        let back_h = conv_out_size(cache.th, self.k, self.stride, self.pad)?;
        let back_w = conv_out_size(cache.tw, self.k, self.stride, self.pad)?;
        debug_assert_eq!((back_h, back_w), (h, w));
        let col_dy = im2col_batch(dy, self.k, self.stride, self.pad, h, w);
        {
            let mut dw = grad_as_mat(&mut self.w, self.c_in, cokk);
            general_mat_mul(1.0, &cache.x_mat.t(), &col_dy, 1.0, &mut dw);
        }
        accumulate_bias_grad(&mut self.b, dy);
        let w_mat = param_as_mat(&self.w, self.c_in, cokk);
        let mut dx_mat = Array2::<f64>::zeros((n * h * w, self.c_in));
        general_mat_mul(1.0, &col_dy, &w_mat.t(), 0.0, &mut dx_mat);
        Ok(rows_to_tensor(&dx_mat, n, self.c_in, h, w, None))
    }
}
