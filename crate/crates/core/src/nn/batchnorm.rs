//! Per-channel batch normalization over (batch, height, width).

use ndarray::{Array1, Axis};
use rand::Rng;

use super::{Param, Tensor4};
use crate::{Error, Result};

/// Whether a forward pass uses batch statistics (and updates the
/// running estimates) or the frozen running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Batch normalization with learnable per-channel scale and shift.
///
/// Running statistics follow the usual convention: the batch variance
/// entering the running estimate is the unbiased one, while the
/// normalization itself uses the biased (population) variance.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub channels: usize,
}

/// State captured by [`BatchNorm2d::forward`] for the backward pass.
pub struct BatchNormCache {
    x_hat: Tensor4,
    inv_std: Array1<f64>,
    mode: BatchNormMode,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        assert!(channels > 0);
        let mut gamma = Param::zeros(&[channels]);
        gamma.value.fill(1.0);
        BatchNorm2d {
            gamma,
            beta: Param::zeros(&[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            channels,
        }
    }

    /// Scale drawn from N(1, 0.02), shift zero.
    pub fn init_dcgan<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.gamma = Param::gaussian(rng, &[self.channels], 1.0, super::conv::INIT_STD);
        self.beta = Param::zeros(&[self.channels]);
    }

    fn check_input(&self, x: &Tensor4, mode: BatchNormMode) -> Result<()> {
        let (n, c, h, w) = x.dim();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm2d expects {} channels, got {c}",
                self.channels
            )));
        }
        if n == 0 {
            return Err(Error::InvalidInput("batchnorm2d: empty batch".into()));
        }
        if mode == BatchNormMode::Train && n * h * w < 2 {
            return Err(Error::InvalidInput(format!(
                "batchnorm2d: batch statistics need at least 2 values per channel, got {}",
                n * h * w
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: BatchNormMode) -> Result<(Tensor4, BatchNormCache)> {
        self.check_input(x, mode)?;
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f64;

        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ci in 0..c {
                    let lane = x.index_axis(Axis(1), ci);
                    let mu = lane.sum() / m;
                    let ss = lane.fold(0.0, |acc, &v| acc + (v - mu) * (v - mu));
                    mean[ci] = mu;
                    var[ci] = ss / m;
                }
                for ci in 0..c {
                    self.running_mean[ci] =
                        (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                    let unbiased = var[ci] * m / (m - 1.0);
                    self.running_var[ci] =
                        (1.0 - self.momentum) * self.running_var[ci] + self.momentum * unbiased;
                }
                (mean, var)
            }
            BatchNormMode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut x_hat = Tensor4::zeros(x.raw_dim());
        let mut y = Tensor4::zeros(x.raw_dim());
        for ci in 0..c {
            let (mu, is) = (mean[ci], inv_std[ci]);
            let (g, b) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
            ndarray::Zip::from(x.index_axis(Axis(1), ci))
                .and(x_hat.index_axis_mut(Axis(1), ci))
                .and(y.index_axis_mut(Axis(1), ci))
                .for_each(|&v, xh, out| {
                    let t = (v - mu) * is;
                    *xh = t;
                    *out = g * t + b;
                });
        }
        Ok((y, BatchNormCache { x_hat, inv_std, mode }))
    }

    fn grads(
        &self,
        cache: &BatchNormCache,
        dy: &Tensor4,
    ) -> Result<(Tensor4, Array1<f64>, Array1<f64>)> {
        if dy.dim() != cache.x_hat.dim() {
            return Err(Error::Shape(format!(
                "batchnorm2d backward expects {:?}, got {:?}",
                cache.x_hat.dim(),
                dy.dim()
            )));
        }
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f64;
        let mut dx = Tensor4::zeros(dy.raw_dim());
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for ci in 0..c {
            let dy_lane = dy.index_axis(Axis(1), ci);
            let xh_lane = cache.x_hat.index_axis(Axis(1), ci);
            let sum_dy = dy_lane.sum();
            let sum_dy_xhat = dy_lane
                .iter()
                .zip(xh_lane.iter())
                .fold(0.0, |acc, (&d, &xh)| acc + d * xh);
            dgamma[ci] = sum_dy_xhat;
            dbeta[ci] = sum_dy;

            let scale = self.gamma.value[[ci]] * cache.inv_std[ci];
            let mut dx_lane = dx.index_axis_mut(Axis(1), ci);
            match cache.mode {
                BatchNormMode::Train => {
                    let mean_dy = sum_dy / m;
                    let mean_dy_xhat = sum_dy_xhat / m;
                    ndarray::Zip::from(&mut dx_lane)
                        .and(&dy_lane)
                        .and(&xh_lane)
                        .for_each(|d, &g, &xh| *d = scale * (g - mean_dy - xh * mean_dy_xhat));
                }
                BatchNormMode::Eval => {
                    ndarray::Zip::from(&mut dx_lane)
                        .and(&dy_lane)
                        .for_each(|d, &g| *d = scale * g);
                }
            }
        }
        Ok((dx, dgamma, dbeta))
    }

    /// Accumulates scale and shift gradients and returns the input
    /// gradient. Call [`Param::zero_grad`] between optimizer steps.
    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor4) -> Result<Tensor4> {
        let (dx, dgamma, dbeta) = self.grads(cache, dy)?;
        for ci in 0..self.channels {
            self.gamma.grad[[ci]] += dgamma[ci];
            self.beta.grad[[ci]] += dbeta[ci];
        }
        Ok(dx)
    }

    /// Input gradient only, leaving the parameter gradients untouched.
    pub fn backward_input(&self, cache: &BatchNormCache, dy: &Tensor4) -> Result<Tensor4> {
        Ok(self.grads(cache, dy)?.0)
    }
}
