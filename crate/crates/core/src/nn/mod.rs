//! Dense-image neural network kernels used by the generative model.
//!
//! Everything is 64-bit and CPU-only. There is no autodiff graph: each
//! operation exposes a hand-derived backward, and layers accumulate
//! gradients into their own parameter buffers. All kernels use a fixed
//! accumulation order so repeated runs from the same seed produce
//! bit-identical results.

use ndarray::{Array4, ArrayD, ArrayViewD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

mod batchnorm;
mod conv;

pub use batchnorm::{BatchNorm2d, BatchNormCache, BatchNormMode};
pub use conv::{Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache};

/// Activation map in NCHW layout: (batch, channels, height, width).
pub type Tensor4 = Array4<f64>;

/// One learnable tensor together with its gradient accumulator and
/// per-parameter Adam state.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    m: ArrayD<f64>,
    v: ArrayD<f64>,
    step: u64,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let z = ArrayD::zeros(IxDyn(shape));
        Param { value: z.clone(), grad: z.clone(), m: z.clone(), v: z, step: 0 }
    }

    /// Zero-mean Gaussian init with the given standard deviation.
    pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], mean: f64, std: f64) -> Self {
        let normal = Normal::new(mean, std).expect("finite init parameters");
        let mut p = Param::zeros(shape);
        for w in p.value.iter_mut() {
            *w = normal.sample(rng);
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One Adam update from the accumulated gradient, with bias correction.
    pub fn adam_step(&mut self, cfg: &Adam) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((w, g), m), v) in self
            .value
            .iter_mut()
            .zip(self.grad.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Adam hyperparameters. The defaults match the training setup used by
/// the generative model (lr 2e-4, beta1 0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn leaky_relu(x: &Tensor4, slope: f64) -> Tensor4 {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor4, dy: &Tensor4, slope: f64) -> Tensor4 {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= 0.0 {
            *d *= slope;
        }
    });
    dx
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward of [`sigmoid`]; takes the forward *output*, not the input.
pub fn sigmoid_backward(y: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &s| *d *= s * (1.0 - s));
    dx
}

/// Probability clamp applied inside the binary cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

fn bce_check(pred: &Tensor4, target: &Tensor4) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "bce: prediction shape {:?} does not match target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("bce: empty prediction tensor".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy, with predictions clamped to
/// [`BCE_CLAMP`], 1 - [`BCE_CLAMP`] before the logs.
pub fn bce_loss(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    bce_check(pred, target)?;
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total / pred.len() as f64)
}

/// Gradient of the ideal (unclamped) binary cross-entropy with respect
/// to the predictions; the clamp in [`bce_loss`] only guards the logs.
///
/// Evaluating at the true probability keeps the composition with a
/// sigmoid head well-conditioned: the product with sigmoid's p(1-p)
/// is exactly (p - t)/n however saturated the head is, which is what
/// keeps generator updates alive while the discriminator is winning.
/// A saturated-to-zero denominator (p rounded to exactly 0 or 1) is
/// guarded; the sigmoid factor is zero there anyway.
pub fn bce_backward(pred: &Tensor4, target: &Tensor4) -> Result<Tensor4> {
    bce_check(pred, target)?;
    let scale = 1.0 / pred.len() as f64;
    let mut grad = pred.clone();
    grad.zip_mut_with(target, |p, &t| {
        let denom = (*p * (1.0 - *p)).max(f64::MIN_POSITIVE);
        *p = scale * (*p - t) / denom;
    });
    Ok(grad)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointIndex {
    tensors: Vec<TensorEntry>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MNCKPT01";

/// Writes named tensors into a single flat binary container.
///
/// Layout: 8-byte magic, little-endian u64 index length, JSON index
/// (tensor name, dtype, shape, byte offset), then raw little-endian
/// f64 data. Tensor order is preserved.
pub fn save_checkpoint(path: &Path, tensors: &[(&str, ArrayViewD<f64>)]) -> Result<()> {
    let mut index = CheckpointIndex { tensors: Vec::with_capacity(tensors.len()) };
    let mut offset = 0u64;
    for (name, view) in tensors {
        index.tensors.push(TensorEntry {
            name: (*name).to_string(),
            dtype: "f64".to_string(),
            shape: view.shape().to_vec(),
            offset,
        });
        offset += 8 * view.len() as u64;
    }
    let json = serde_json::to_vec(&index).map_err(|e| Error::Numeric(e.to_string()))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>, bytes: &[u8]| {
        out.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut out, CHECKPOINT_MAGIC)?;
    write(&mut out, &(json.len() as u64).to_le_bytes())?;
    write(&mut out, &json)?;
    for (_, view) in tensors {
        for &v in view.iter() {
            write(&mut out, &v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a container written by [`save_checkpoint`], returning the
/// tensors in their stored order.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = std::io::BufReader::new(file);
    let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint container"));
    }
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    input.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let index: CheckpointIndex =
        serde_json::from_slice(&json).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut data = Vec::new();
    input.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(index.tensors.len());
    for entry in &index.tensors {
        if entry.dtype != "f64" {
            return Err(bad(&format!("unsupported dtype {}", entry.dtype)));
        }
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * count;
        if end > data.len() {
            return Err(bad(&format!("tensor {} runs past end of container", entry.name)));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        out.push((entry.name.clone(), arr));
    }
    Ok(out)
}
