//! Adversarial generator for daily mobility networks.
//!
//! A DCGAN-style pair: the generator upsamples a latent vector to a
//! 64x64 nonnegative matrix through transposed convolutions, the
//! discriminator scores matrices as real or synthetic. Training follows
//! the classic alternating scheme; everything is seeded and
//! deterministic, so the same config and data reproduce the run
//! bit for bit.

use ndarray::{Array, Axis};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::net::MobilityNetwork;
use crate::nn::{
    bce_backward, bce_loss, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, Adam, BatchNorm2d, BatchNormCache, BatchNormMode, Conv2d, Conv2dCache,
    ConvTranspose2d, ConvTranspose2dCache, Tensor4,
};
use crate::{Error, Result};

/// Side length of the matrices both networks operate on.
pub const IMAGE_SIDE: usize = 64;

/// Generator channel widths after each transposed-conv stage.
const GEN_CHANNELS: [usize; 5] = [512, 256, 128, 64, 1];
const GEN_STRIDES: [usize; 5] = [1, 2, 2, 2, 2];
const GEN_PADS: [usize; 5] = [0, 1, 1, 1, 1];

/// Discriminator channel widths after each conv stage.
const DISC_CHANNELS: [usize; 5] = [64, 128, 256, 512, 1];
const DISC_STRIDES: [usize; 5] = [2, 2, 2, 2, 1];
const DISC_PADS: [usize; 5] = [1, 1, 1, 1, 0];

const KERNEL: usize = 4;
const LEAKY_SLOPE: f64 = 0.2;

/// Negative-score slack for the optional plateau stop.
const PLATEAU_BAND: f64 = 0.05;
const PLATEAU_RUN: usize = 200;

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub seed: u64,
    /// Train on log1p-scaled matrices and invert when sampling.
    pub scale_log1p: bool,
    /// Stop once both scores sit within 0.05 of one half for 200
    /// consecutive iterations.
    pub early_stop: bool,
    /// Round sampled matrices to whole trips.
    pub round_samples: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 100,
            epochs: 6000,
            batch_size: 146,
            lr: 2e-4,
            b1: 0.5,
            b2: 0.999,
            seed: 0,
            scale_log1p: false,
            early_stop: false,
            round_samples: false,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "gan config: latent_dim, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.b1 > 0.0 && self.b1 < 1.0 && self.b2 > 0.0 && self.b2 < 1.0) {
            return Err(Error::InvalidInput(
                "gan config: lr must be positive and betas in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam { lr: self.lr, beta1: self.b1, beta2: self.b2, eps: 1e-8 }
    }
}

/// Latent-to-matrix half of the model: five transposed-conv stages
/// (512, 256, 128, 64, 1 channels), batch norm and ReLU on hidden
/// stages, final ReLU so flows stay nonnegative.
#[derive(Debug, Clone)]
pub struct Generator {
    pub convs: Vec<ConvTranspose2d>,
    pub bns: Vec<BatchNorm2d>,
    pub latent_dim: usize,
}

struct GenStage {
    conv: ConvTranspose2dCache,
    bn: Option<BatchNormCache>,
    pre_act: Tensor4,
}

/// Per-stage state captured by [`Generator::forward`].
pub struct GenCache {
    stages: Vec<GenStage>,
}

impl Generator {
    /// Builds the fixed 64x64 layer plan with zeroed weights.
    pub fn build(cfg: &GanConfig) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::with_capacity(5);
        let mut c_in = cfg.latent_dim;
        for i in 0..5 {
            convs.push(ConvTranspose2d::new(c_in, GEN_CHANNELS[i], KERNEL, GEN_STRIDES[i], GEN_PADS[i]));
            c_in = GEN_CHANNELS[i];
        }
        let bns = GEN_CHANNELS[..4].iter().map(|&c| BatchNorm2d::new(c)).collect();
        let g = Generator { convs, bns, latent_dim: cfg.latent_dim };
        let mut side = 1;
        for conv in &g.convs {
            side = conv.out_size(side, side)?.0;
        }
        if side != IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "generator plan produces {side}x{side}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"
            )));
        }
        Ok(g)
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for conv in &mut self.convs {
            conv.init_dcgan(rng);
        }
        for bn in &mut self.bns {
            bn.init_dcgan(rng);
        }
    }

    pub fn forward(&mut self, z: &Tensor4, mode: BatchNormMode) -> Result<(Tensor4, GenCache)> {
        let (_, c, h, w) = z.dim();
        if c != self.latent_dim || h != 1 || w != 1 {
            return Err(Error::Shape(format!(
                "generator expects latent shape (n, {}, 1, 1), got {:?}",
                self.latent_dim,
                z.dim()
            )));
        }
        let mut stages = Vec::with_capacity(5);
        let mut cur = z.clone();
        for i in 0..5 {
            let (conv_out, conv_cache) = self.convs[i].forward(&cur)?;
            let (pre_act, bn_cache) = if i < 4 {
                let (b, c) = self.bns[i].forward(&conv_out, mode)?;
                (b, Some(c))
            } else {
                (conv_out, None)
            };
            cur = relu(&pre_act);
            stages.push(GenStage { conv: conv_cache, bn: bn_cache, pre_act });
        }
        Ok((cur, GenCache { stages }))
    }

    /// Accumulates per-layer gradients; returns the latent gradient.
    pub fn backward(&mut self, cache: &GenCache, dy: &Tensor4) -> Result<Tensor4> {
        let mut d = dy.clone();
        for i in (0..5).rev() {
            let stage = &cache.stages[i];
            d = relu_backward(&stage.pre_act, &d);
            if let Some(bn_cache) = &stage.bn {
                d = self.bns[i].backward(bn_cache, &d)?;
            }
            d = self.convs[i].backward(&stage.conv, &d)?;
        }
        Ok(d)
    }

    pub fn zero_grad(&mut self) {
        for conv in &mut self.convs {
            conv.w.zero_grad();
            conv.b.zero_grad();
        }
        for bn in &mut self.bns {
            bn.gamma.zero_grad();
            bn.beta.zero_grad();
        }
    }

    pub fn adam_step(&mut self, adam: &Adam) {
        for conv in &mut self.convs {
            conv.w.adam_step(adam);
            conv.b.adam_step(adam);
        }
        for bn in &mut self.bns {
            bn.gamma.adam_step(adam);
            bn.beta.adam_step(adam);
        }
    }
}

/// Matrix-to-score half of the model: five conv stages (64, 128, 256,
/// 512, 1 channels), leaky ReLU everywhere, batch norm on the middle
/// stages, sigmoid head.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
    /// Batch norms for stages 2-4; the first stage goes without, as in
    /// the standard DCGAN layout.
    pub bns: Vec<BatchNorm2d>,
}

struct DiscStage {
    conv: Conv2dCache,
    bn: Option<BatchNormCache>,
    pre_act: Tensor4,
}

/// Per-stage state captured by [`Discriminator::forward`].
pub struct DiscCache {
    stages: Vec<DiscStage>,
    score: Tensor4,
}

impl Discriminator {
    pub fn build() -> Self {
        let mut convs = Vec::with_capacity(5);
        let mut c_in = 1;
        for i in 0..5 {
            convs.push(Conv2d::new(c_in, DISC_CHANNELS[i], KERNEL, DISC_STRIDES[i], DISC_PADS[i]));
            c_in = DISC_CHANNELS[i];
        }
        let bns = DISC_CHANNELS[1..4].iter().map(|&c| BatchNorm2d::new(c)).collect();
        Discriminator { convs, bns }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for conv in &mut self.convs {
            conv.init_dcgan(rng);
        }
        for bn in &mut self.bns {
            bn.init_dcgan(rng);
        }
    }

    /// Scores a batch of matrices; output shape is (n, 1, 1, 1) with
    /// entries in (0, 1).
    pub fn forward(&mut self, x: &Tensor4, mode: BatchNormMode) -> Result<(Tensor4, DiscCache)> {
        let (_, c, h, w) = x.dim();
        if c != 1 || h != IMAGE_SIDE || w != IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "discriminator expects shape (n, 1, {IMAGE_SIDE}, {IMAGE_SIDE}), got {:?}",
                x.dim()
            )));
        }
        let mut stages = Vec::with_capacity(5);
        let mut cur = x.clone();
        for i in 0..4 {
            let (conv_out, conv_cache) = self.convs[i].forward(&cur)?;
            let (pre_act, bn_cache) = if i >= 1 {
                let (b, c) = self.bns[i - 1].forward(&conv_out, mode)?;
                (b, Some(c))
            } else {
                (conv_out, None)
            };
            cur = leaky_relu(&pre_act, LEAKY_SLOPE);
            stages.push(DiscStage { conv: conv_cache, bn: bn_cache, pre_act });
        }
        let (logits, conv_cache) = self.convs[4].forward(&cur)?;
        let score = sigmoid(&logits);
        stages.push(DiscStage { conv: conv_cache, bn: None, pre_act: logits });
        Ok((score.clone(), DiscCache { stages, score }))
    }

    /// Accumulates per-layer gradients; returns the input-matrix
    /// gradient.
    pub fn backward(&mut self, cache: &DiscCache, dscore: &Tensor4) -> Result<Tensor4> {
        let d_logits = sigmoid_backward(&cache.score, dscore);
        let mut d = self.convs[4].backward(&cache.stages[4].conv, &d_logits)?;
        for i in (0..4).rev() {
            let stage = &cache.stages[i];
            d = leaky_relu_backward(&stage.pre_act, &d, LEAKY_SLOPE);
            if let Some(bn_cache) = &stage.bn {
                d = self.bns[i - 1].backward(bn_cache, &d)?;
            }
            d = self.convs[i].backward(&stage.conv, &d)?;
        }
        Ok(d)
    }

    /// Input-matrix gradient with the discriminator treated as a frozen
    /// function: no parameter gradients are touched. This is the path
    /// the generator update backpropagates through.
    pub fn backward_input(&self, cache: &DiscCache, dscore: &Tensor4) -> Result<Tensor4> {
        let d_logits = sigmoid_backward(&cache.score, dscore);
        let mut d = self.convs[4].backward_input(&cache.stages[4].conv, &d_logits)?;
        for i in (0..4).rev() {
            let stage = &cache.stages[i];
            d = leaky_relu_backward(&stage.pre_act, &d, LEAKY_SLOPE);
            if let Some(bn_cache) = &stage.bn {
                d = self.bns[i - 1].backward_input(bn_cache, &d)?;
            }
            d = self.convs[i].backward_input(&stage.conv, &d)?;
        }
        Ok(d)
    }

    pub fn zero_grad(&mut self) {
        for conv in &mut self.convs {
            conv.w.zero_grad();
            conv.b.zero_grad();
        }
        for bn in &mut self.bns {
            bn.gamma.zero_grad();
            bn.beta.zero_grad();
        }
    }

    pub fn adam_step(&mut self, adam: &Adam) {
        for conv in &mut self.convs {
            conv.w.adam_step(adam);
            conv.b.adam_step(adam);
        }
        for bn in &mut self.bns {
            bn.gamma.adam_step(adam);
            bn.beta.adam_step(adam);
        }
    }
}

/// Trained (or initialized) generator-discriminator pair.
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub config: GanConfig,
}

/// One training iteration's losses and mean scores.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

/// Per-iteration loss and score track of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        w.write_record(["iteration", "g_loss", "d_loss", "real_score", "fake_score"])
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.17e}", r.g_loss),
                format!("{:.17e}", r.d_loss),
                format!("{:.17e}", r.real_score),
                format!("{:.17e}", r.fake_score),
            ])
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            if row.len() != 5 {
                return Err(Error::parse(path, i + 2, format!("expected 5 columns, got {}", row.len())));
            }
            let field = |j: usize| -> Result<f64> {
                row[j].parse().map_err(|_| Error::parse(path, i + 2, format!("bad number {:?}", &row[j])))
            };
            records.push(IterationRecord {
                iteration: row[0]
                    .parse()
                    .map_err(|_| Error::parse(path, i + 2, format!("bad iteration {:?}", &row[0])))?,
                g_loss: field(1)?,
                d_loss: field(2)?,
                real_score: field(3)?,
                fake_score: field(4)?,
            });
        }
        Ok(TrainingHistory { records })
    }
}

fn stack_networks(nets: &[MobilityNetwork], log1p: bool) -> Result<Tensor4> {
    if nets.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for net in nets {
        if net.n() != IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "network {} is {}x{}, the model needs {IMAGE_SIDE}x{IMAGE_SIDE}",
                net.date,
                net.n(),
                net.n()
            )));
        }
    }
    let mut out = Tensor4::zeros((nets.len(), 1, IMAGE_SIDE, IMAGE_SIDE));
    for (i, net) in nets.iter().enumerate() {
        let mut slab = out.index_axis_mut(Axis(0), i);
        let mut plane = slab.index_axis_mut(Axis(0), 0);
        plane.assign(&net.weights);
        if log1p {
            plane.mapv_inplace(f64::ln_1p);
        }
    }
    Ok(out)
}

fn gaussian_latent(rng: &mut ChaCha8Rng, n: usize, latent_dim: usize) -> Tensor4 {
    Array::from_shape_simple_fn((n, latent_dim, 1, 1), || StandardNormal.sample(rng))
}

fn mean_of(t: &Tensor4) -> f64 {
    t.sum() / t.len() as f64
}

/// Runs the adversarial training loop and returns the final model with
/// its full per-iteration history.
pub fn train(train_set: &[MobilityNetwork], cfg: &GanConfig) -> Result<(GanModel, TrainingHistory)> {
    train_with(train_set, cfg, |_, _, _| Ok(()))
}

/// [`train`] with a hook called after each epoch (for progress display
/// and snapshot dumps).
pub fn train_with<F>(
    train_set: &[MobilityNetwork],
    cfg: &GanConfig,
    mut on_epoch: F,
) -> Result<(GanModel, TrainingHistory)>
where
    F: FnMut(usize, &mut GanModel, &TrainingHistory) -> Result<()>,
{
    cfg.validate()?;
    if train_set.len() % cfg.batch_size != 0 {
        return Err(Error::InvalidInput(format!(
            "batch size {} does not divide the training-set size {}",
            cfg.batch_size,
            train_set.len()
        )));
    }
    let reals = stack_networks(train_set, cfg.scale_log1p)?;
    let n_batches = train_set.len() / cfg.batch_size;
    let adam = cfg.adam();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GanModel {
        generator: Generator::build(cfg)?,
        discriminator: Discriminator::build(),
        config: cfg.clone(),
    };
    model.generator.init(&mut rng);
    model.discriminator.init(&mut rng);

    let b = cfg.batch_size;
    let valid = Tensor4::from_elem((b, 1, 1, 1), 1.0);
    let synthetic = Tensor4::zeros((b, 1, 1, 1));
    let mut history = TrainingHistory::default();
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut plateau = 0usize;
    let mut iteration = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(b) {
            iteration += 1;
            let mut real_batch = Tensor4::zeros((b, 1, IMAGE_SIDE, IMAGE_SIDE));
            for (slot, &src) in batch.iter().enumerate() {
                real_batch
                    .index_axis_mut(Axis(0), slot)
                    .assign(&reals.index_axis(Axis(0), src));
            }

            // Generator update: make D call the fakes real.
            model.generator.zero_grad();
            let z = gaussian_latent(&mut rng, b, cfg.latent_dim);
            let (fakes, g_cache) = model.generator.forward(&z, BatchNormMode::Train)?;
            let (fake_scores, d_fake_cache) =
                model.discriminator.forward(&fakes, BatchNormMode::Train)?;
            let g_loss = bce_loss(&fake_scores, &valid)?;
            let d_fake_grad = bce_backward(&fake_scores, &valid)?;
            let d_input_grad = model.discriminator.backward_input(&d_fake_cache, &d_fake_grad)?;
            model.generator.backward(&g_cache, &d_input_grad)?;
            model.generator.adam_step(&adam);

            // Discriminator update: tell reals and (detached) fakes apart.
            // D is unchanged since the fake forward above, so its scores
            // and cache are reused.
            model.discriminator.zero_grad();
            let (real_scores, d_real_cache) =
                model.discriminator.forward(&real_batch, BatchNormMode::Train)?;
            let loss_real = bce_loss(&real_scores, &valid)?;
            let loss_fake = bce_loss(&fake_scores, &synthetic)?;
            let d_loss = 0.5 * (loss_real + loss_fake);
            let mut real_grad = bce_backward(&real_scores, &valid)?;
            real_grad.mapv_inplace(|v| 0.5 * v);
            let mut fake_grad = bce_backward(&fake_scores, &synthetic)?;
            fake_grad.mapv_inplace(|v| 0.5 * v);
            model.discriminator.backward(&d_real_cache, &real_grad)?;
            model.discriminator.backward(&d_fake_cache, &fake_grad)?;
            model.discriminator.adam_step(&adam);

            let real_score = mean_of(&real_scores);
            let fake_score = mean_of(&fake_scores);
            history.records.push(IterationRecord { iteration, g_loss, d_loss, real_score, fake_score });

            if cfg.early_stop {
                if (real_score - 0.5).abs() < PLATEAU_BAND && (fake_score - 0.5).abs() < PLATEAU_BAND {
                    plateau += 1;
                    if plateau >= PLATEAU_RUN {
                        break 'epochs;
                    }
                } else {
                    plateau = 0;
                }
            }
        }
        debug_assert_eq!(iteration, (epoch + 1) * n_batches);
        on_epoch(epoch, &mut model, &history)?;
    }
    Ok((model, history))
}

/// Chunk size for sampling forwards; fixed so results do not depend on
/// how many networks are requested at once.
const SAMPLE_CHUNK: usize = 64;

impl GanModel {
    /// Draws `k` networks from independent standard-Gaussian latents.
    /// Batch norms run in EVAL mode; entries are nonnegative.
    pub fn sample(&mut self, k: usize, seed: u64) -> Result<Vec<MobilityNetwork>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(k);
        let mut produced = 0usize;
        while produced < k {
            let take = SAMPLE_CHUNK.min(k - produced);
            let z = gaussian_latent(&mut rng, take, self.config.latent_dim);
            let (batch, _) = self.generator.forward(&z, BatchNormMode::Eval)?;
            for i in 0..take {
                let mut weights = batch
                    .index_axis(Axis(0), i)
                    .index_axis(Axis(0), 0)
                    .to_owned();
                if self.config.scale_log1p {
                    weights.mapv_inplace(f64::exp_m1);
                }
                if self.config.round_samples {
                    weights.mapv_inplace(f64::round);
                }
                out.push(MobilityNetwork::new(
                    format!("synthetic-{:04}", produced + i),
                    weights,
                )?);
            }
            produced += take;
        }
        Ok(out)
    }

    /// Writes all parameters and batch-norm running statistics to a
    /// checkpoint container, plus a `.meta.json` sidecar holding the
    /// config so [`GanModel::load`] is self-contained.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, ndarray::ArrayViewD<f64>)> = Vec::new();
        collect_tensors(&self.generator, &self.discriminator, &mut tensors);
        let refs: Vec<(&str, ndarray::ArrayViewD<f64>)> =
            tensors.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        crate::nn::save_checkpoint(path, &refs)?;
        let meta = serde_json::to_string_pretty(&self.config)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let meta_path = meta_path(path);
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }

    /// Rebuilds a model from [`GanModel::save`] output.
    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = meta_path(path);
        let raw = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let config: GanConfig =
            serde_json::from_str(&raw).map_err(|e| Error::parse(&meta_path, 0, e.to_string()))?;
        let mut model = GanModel {
            generator: Generator::build(&config)?,
            discriminator: Discriminator::build(),
            config,
        };
        let mut by_name: BTreeMap<String, ndarray::ArrayD<f64>> =
            crate::nn::load_checkpoint(path)?.into_iter().collect();
        let mut expected: Vec<(String, ndarray::ArrayViewD<f64>)> = Vec::new();
        collect_tensors(&model.generator, &model.discriminator, &mut expected);
        let names: Vec<(String, Vec<usize>)> = expected
            .iter()
            .map(|(n, v)| (n.clone(), v.shape().to_vec()))
            .collect();
        drop(expected);
        for (name, shape) in names {
            let arr = by_name.remove(&name).ok_or_else(|| {
                Error::parse(path, 0, format!("checkpoint is missing tensor {name}"))
            })?;
            if arr.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    arr.shape(),
                    shape
                )));
            }
            assign_tensor(&mut model, &name, arr)?;
        }
        if let Some((name, _)) = by_name.into_iter().next() {
            return Err(Error::parse(path, 0, format!("checkpoint has unknown tensor {name}")));
        }
        Ok(model)
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

fn collect_tensors<'a>(
    g: &'a Generator,
    d: &'a Discriminator,
    out: &mut Vec<(String, ndarray::ArrayViewD<'a, f64>)>,
) {
    for (i, conv) in g.convs.iter().enumerate() {
        out.push((format!("g.conv{i}.w"), conv.w.value.view()));
        out.push((format!("g.conv{i}.b"), conv.b.value.view()));
    }
    for (i, bn) in g.bns.iter().enumerate() {
        out.push((format!("g.bn{i}.gamma"), bn.gamma.value.view()));
        out.push((format!("g.bn{i}.beta"), bn.beta.value.view()));
        out.push((format!("g.bn{i}.running_mean"), bn.running_mean.view().into_dyn()));
        out.push((format!("g.bn{i}.running_var"), bn.running_var.view().into_dyn()));
    }
    for (i, conv) in d.convs.iter().enumerate() {
        out.push((format!("d.conv{i}.w"), conv.w.value.view()));
        out.push((format!("d.conv{i}.b"), conv.b.value.view()));
    }
    for (i, bn) in d.bns.iter().enumerate() {
        out.push((format!("d.bn{i}.gamma"), bn.gamma.value.view()));
        out.push((format!("d.bn{i}.beta"), bn.beta.value.view()));
        out.push((format!("d.bn{i}.running_mean"), bn.running_mean.view().into_dyn()));
        out.push((format!("d.bn{i}.running_var"), bn.running_var.view().into_dyn()));
    }
}

fn assign_tensor(model: &mut GanModel, name: &str, arr: ndarray::ArrayD<f64>) -> Result<()> {
    let parts: Vec<&str> = name.split('.').collect();
    let bad = || Error::InvalidInput(format!("unknown checkpoint tensor {name}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let idx: usize = parts[1]
        .trim_start_matches("conv")
        .trim_start_matches("bn")
        .parse()
        .map_err(|_| bad())?;
    let one_dim = |arr: ndarray::ArrayD<f64>| -> Result<ndarray::Array1<f64>> {
        arr.into_dimensionality().map_err(|e| Error::Shape(e.to_string()))
    };
    match (parts[0], parts[1].starts_with("conv"), parts[2]) {
        ("g", true, "w") => model.generator.convs[idx].w.value = arr,
        ("g", true, "b") => model.generator.convs[idx].b.value = arr,
        ("g", false, "gamma") => model.generator.bns[idx].gamma.value = arr,
        ("g", false, "beta") => model.generator.bns[idx].beta.value = arr,
        ("g", false, "running_mean") => model.generator.bns[idx].running_mean = one_dim(arr)?,
        ("g", false, "running_var") => model.generator.bns[idx].running_var = one_dim(arr)?,
        ("d", true, "w") => model.discriminator.convs[idx].w.value = arr,
        ("d", true, "b") => model.discriminator.convs[idx].b.value = arr,
        ("d", false, "gamma") => model.discriminator.bns[idx].gamma.value = arr,
        ("d", false, "beta") => model.discriminator.bns[idx].beta.value = arr,
        ("d", false, "running_mean") => model.discriminator.bns[idx].running_mean = one_dim(arr)?,
        ("d", false, "running_var") => model.discriminator.bns[idx].running_var = one_dim(arr)?,
        _ => return Err(bad()),
    }
    Ok(())
}
