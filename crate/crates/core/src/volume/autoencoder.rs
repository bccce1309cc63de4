//! 3D convolutional denoising autoencoder.
//!
//! Encoder: `stages × (conv3d → batchnorm3d → relu → maxpool3d)`.
//! Latent head: `fully_connected(flatten(encoder output)) → latent_dim`.
//! Decoder: mirror of the encoder, each stage upsampling ×pool then
//! convolving; the last stage is a linear conv with bias back to one channel.
//! The decoder consumes the encoder feature map, not the latent vector.

use log::debug;
use rand::seq::SliceRandom;

use crate::autograd::{NamedGrads, Tape, Var};
use crate::checkpoint::NamedTensors;
use crate::error::{Error, Result};
use crate::ops::{BnMode, RunningStats};
use crate::optim::{cosine_lr, AdamConfig, AdamState};
use crate::rng::{fan_in_uniform, rng_for, stream};
use crate::tensor::Tensor;

use super::features::{FeatureMatrix, FeatureRow};
use super::{add_noise_with, min_max_volume, VolumeSample};

pub const AE_MAGIC: &[u8; 4] = b"DAE3";

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    /// `D, H, W` of the (single-channel) input volume.
    pub input_shape: [usize; 3],
    /// Output channels of each encoder stage.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub pool: usize,
    pub latent_dim: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            input_shape: [64, 64, 64],
            channels: vec![8, 16, 32],
            kernel: 3,
            padding: 1,
            pool: 2,
            latent_dim: 512,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::contract(
                "autoencoder needs at least one non-empty stage",
            ));
        }
        if self.kernel.is_multiple_of(2) || 2 * self.padding + 1 != self.kernel {
            return Err(Error::contract(format!(
                "kernel {} with padding {} does not preserve spatial size",
                self.kernel, self.padding
            )));
        }
        if self.pool < 1 || self.latent_dim == 0 {
            return Err(Error::contract(
                "pool window and latent_dim must be positive",
            ));
        }
        let factor = self.pool.pow(self.channels.len() as u32);
        if self.input_shape.iter().any(|&s| s == 0 || s % factor != 0) {
            return Err(Error::dim(format!(
                "input shape {:?} must be divisible by {factor} for the decoder to mirror the encoder",
                self.input_shape
            )));
        }
        Ok(())
    }

    fn bottleneck(&self) -> [usize; 4] {
        let factor = self.pool.pow(self.channels.len() as u32);
        let c = *self.channels.last().expect("validated");
        let [d, h, w] = self.input_shape.map(|s| s / factor);
        [c, d, h, w]
    }

    fn flat_dim(&self) -> usize {
        self.bottleneck().iter().product()
    }
}

#[derive(Clone, Debug)]
struct ConvBnBlock {
    kernel: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
}

impl ConvBnBlock {
    fn new(cin: usize, cout: usize, k: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            kernel: fan_in_uniform(rng, &[cout, cin, k, k, k], cin * k * k * k)
                .with_requires_grad(),
            gamma: Tensor::ones(&[cout]).with_requires_grad(),
            beta: Tensor::zeros(&[cout]).with_requires_grad(),
            running: RunningStats::new(cout),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AutoencoderModel {
    pub config: AutoencoderConfig,
    encoder: Vec<ConvBnBlock>,
    latent_w: Tensor,
    latent_b: Tensor,
    decoder: Vec<ConvBnBlock>,
    out_kernel: Tensor,
    out_bias: Tensor,
}

/// Tape handles of one forward pass.
pub struct AeForward {
    pub reconstruction: Var,
    pub latent: Option<Var>,
    params: Vec<Var>,
}

impl AutoencoderModel {
    pub fn new(config: AutoencoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, stream::INIT);
        let k = config.kernel;
        let mut chain = vec![1];
        chain.extend(&config.channels);
        let encoder = chain
            .windows(2)
            .map(|p| ConvBnBlock::new(p[0], p[1], k, &mut rng))
            .collect();
        let flat = config.flat_dim();
        let latent_w =
            fan_in_uniform(&mut rng, &[config.latent_dim, flat], flat).with_requires_grad();
        let latent_b = fan_in_uniform(&mut rng, &[config.latent_dim], flat).with_requires_grad();
        let rev: Vec<usize> = chain.iter().rev().copied().collect();
        let decoder = rev[..rev.len() - 1]
            .windows(2)
            .map(|p| ConvBnBlock::new(p[0], p[1], k, &mut rng))
            .collect();
        let last_in = rev[rev.len() - 2];
        let out_kernel = fan_in_uniform(&mut rng, &[1, last_in, k, k, k], last_in * k * k * k)
            .with_requires_grad();
        Ok(Self {
            config,
            encoder,
            latent_w,
            latent_b,
            decoder,
            out_kernel,
            out_bias: Tensor::zeros(&[1]).with_requires_grad(),
        })
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = Vec::new();
        for b in &self.encoder {
            p.extend([&b.kernel, &b.gamma, &b.beta]);
        }
        p.extend([&self.latent_w, &self.latent_b]);
        for b in &self.decoder {
            p.extend([&b.kernel, &b.gamma, &b.beta]);
        }
        p.extend([&self.out_kernel, &self.out_bias]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        for b in &mut self.encoder {
            p.extend([&mut b.kernel, &mut b.gamma, &mut b.beta]);
        }
        p.extend([&mut self.latent_w, &mut self.latent_b]);
        for b in &mut self.decoder {
            p.extend([&mut b.kernel, &mut b.gamma, &mut b.beta]);
        }
        p.extend([&mut self.out_kernel, &mut self.out_bias]);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = Vec::new();
        for i in 0..self.encoder.len() {
            n.extend(["kernel", "gamma", "beta"].map(|s| format!("enc{i}.{s}")));
        }
        n.extend(["latent.w".into(), "latent.b".into()]);
        for i in 0..self.decoder.len() {
            n.extend(["kernel", "gamma", "beta"].map(|s| format!("dec{i}.{s}")));
        }
        n.extend(["out.kernel".into(), "out.bias".into()]);
        n
    }

    /// The final decoder convolution, exposed so callers can zero it.
    pub fn output_layer_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.out_kernel, &mut self.out_bias)
    }

    /// Records a forward pass over a `N×1×D×H×W` batch. Batch-norm running
    /// statistics are updated in train mode.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: BnMode,
        with_latent: bool,
    ) -> Result<AeForward> {
        let shape = tape.value(x).shape().to_vec();
        let [d, h, w] = self.config.input_shape;
        if shape.len() != 5 || shape[1] != 1 || shape[2..] != [d, h, w] {
            return Err(Error::dim(format!(
                "autoencoder expects N×1×{d}×{h}×{w}, got {shape:?}"
            )));
        }
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.param(p)).collect();
        let (pad, pool) = (self.config.padding, self.config.pool);
        let mut it = params.iter().copied();

        let mut hcur = x;
        for block in &mut self.encoder {
            let (k, g, b) = (next(&mut it), next(&mut it), next(&mut it));
            hcur = tape.conv3d(hcur, k, pad)?;
            hcur = tape.batchnorm3d(hcur, g, b, mode, &mut block.running)?;
            hcur = tape.relu(hcur);
            hcur = tape.maxpool3d(hcur, pool)?;
        }
        let encoded = hcur;

        let (lw, lb) = (next(&mut it), next(&mut it));
        let latent = if with_latent {
            let n = shape[0];
            let flat = tape.reshape(encoded, &[n, self.config.flat_dim()])?;
            Some(tape.linear(flat, lw, Some(lb))?)
        } else {
            None
        };

        for block in &mut self.decoder {
            let (k, g, b) = (next(&mut it), next(&mut it), next(&mut it));
            hcur = tape.upsample3d(hcur, pool)?;
            hcur = tape.conv3d(hcur, k, pad)?;
            hcur = tape.batchnorm3d(hcur, g, b, mode, &mut block.running)?;
            hcur = tape.relu(hcur);
        }
        let (ok, ob) = (next(&mut it), next(&mut it));
        hcur = tape.upsample3d(hcur, pool)?;
        hcur = tape.conv3d(hcur, ok, pad)?;
        let reconstruction = tape.channel_bias(hcur, ob)?;

        Ok(AeForward {
            reconstruction,
            latent,
            params,
        })
    }

    /// Reconstruction loss of `noisy` against `clean` (both `N×1×D×H×W`) and
    /// the gradient of every parameter it reaches, keyed by checkpoint name.
    pub fn loss_gradients(
        &mut self,
        noisy: &Tensor,
        clean: &Tensor,
        mode: BnMode,
    ) -> Result<(f64, NamedGrads)> {
        let mut tape = Tape::new();
        let x = tape.constant(noisy.clone());
        let fw = self.forward(&mut tape, x, mode, false)?;
        let y = tape.constant(clean.clone());
        let loss = tape.mse_loss(fw.reconstruction, y)?;
        let grads = tape.backward(loss)?;
        let named = self
            .param_names()
            .into_iter()
            .zip(&fw.params)
            .filter_map(|(n, &v)| grads.get(v).map(|g| (n, g.to_vec())))
            .collect();
        Ok((tape.value(loss).data()[0], named))
    }

    /// Reconstruction (`D×H×W`) and latent vector for one volume, with
    /// batch-norm in eval mode.
    pub fn forward_volume(&mut self, volume: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let x = tape.constant(as_batch(&[volume], self.config.input_shape)?);
        let out = self.forward(&mut tape, x, BnMode::Eval, true)?;
        let recon = tape.value(out.reconstruction).reshape(volume.shape())?;
        let latent = tape
            .value(out.latent.expect("requested"))
            .reshape(&[self.config.latent_dim])?;
        Ok((recon, latent))
    }

    /// Latent vector with eval-mode batch-norm; no state is modified.
    pub fn encode(&self, volume: &Tensor) -> Result<Vec<f64>> {
        let mut scratch = self.clone();
        Ok(scratch.forward_volume(volume)?.1.into_data())
    }

    pub fn to_named(&self) -> NamedTensors {
        let mut nt = NamedTensors::new();
        let c = &self.config;
        let meta: Vec<f64> = c
            .input_shape
            .iter()
            .chain([c.kernel, c.padding, c.pool, c.latent_dim].iter())
            .map(|&v| v as f64)
            .collect();
        nt.push("meta.arch", &Tensor::from_vec(meta));
        nt.push(
            "meta.channels",
            &Tensor::from_vec(c.channels.iter().map(|&v| v as f64).collect()),
        );
        for (name, p) in self.param_names().into_iter().zip(self.params()) {
            nt.push(name, p);
        }
        for (i, b) in self.encoder.iter().enumerate() {
            nt.push(
                format!("enc{i}.running_mean"),
                &Tensor::from_vec(b.running.mean.clone()),
            );
            nt.push(
                format!("enc{i}.running_var"),
                &Tensor::from_vec(b.running.var.clone()),
            );
        }
        for (i, b) in self.decoder.iter().enumerate() {
            nt.push(
                format!("dec{i}.running_mean"),
                &Tensor::from_vec(b.running.mean.clone()),
            );
            nt.push(
                format!("dec{i}.running_var"),
                &Tensor::from_vec(b.running.var.clone()),
            );
        }
        nt
    }

    pub fn from_named(nt: &NamedTensors) -> Result<Self> {
        let arch: Vec<usize> = nt
            .get("meta.arch")?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        let channels = nt
            .get("meta.channels")?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        let [d, h, w, kernel, padding, pool, latent_dim] = arch[..] else {
            return Err(Error::Format("meta.arch must hold 7 values".into()));
        };
        let config = AutoencoderConfig {
            input_shape: [d, h, w],
            channels,
            kernel,
            padding,
            pool,
            latent_dim,
        };
        let mut model = Self::new(config, 0)?;
        let names = model.param_names();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = nt.get(name)?;
            if t.shape() != p.shape() {
                return Err(Error::Format(format!("`{name}` has shape {:?}", t.shape())));
            }
            p.data_mut().copy_from_slice(t.data());
        }
        let load_stats = |prefix: String, rs: &mut RunningStats| -> Result<()> {
            rs.mean = nt.get(&format!("{prefix}.running_mean"))?.data().to_vec();
            rs.var = nt.get(&format!("{prefix}.running_var"))?.data().to_vec();
            Ok(())
        };
        for (i, b) in model.encoder.iter_mut().enumerate() {
            load_stats(format!("enc{i}"), &mut b.running)?;
        }
        for (i, b) in model.decoder.iter_mut().enumerate() {
            load_stats(format!("dec{i}"), &mut b.running)?;
        }
        Ok(model)
    }
}

fn next(it: &mut impl Iterator<Item = Var>) -> Var {
    it.next().expect("parameter order matches forward")
}

fn as_batch(volumes: &[&Tensor], shape: [usize; 3]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(volumes.len() * shape.iter().product::<usize>());
    for v in volumes {
        if v.shape() != shape {
            return Err(Error::dim(format!(
                "volume {:?} does not match autoencoder input {shape:?}",
                v.shape()
            )));
        }
        data.extend_from_slice(v.data());
    }
    Tensor::new(&[volumes.len(), 1, shape[0], shape[1], shape[2]], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeTrainConfig {
    pub arch: AutoencoderConfig,
    pub epochs: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            arch: AutoencoderConfig::default(),
            epochs: 100,
            lr: 9e-4,
            min_lr: 0.0,
            batch_size: 4,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Trains on min-max normalized volumes, reconstructing the clean volume
/// from `x + N(0, 1)`. Returns the model and the mean loss of each epoch.
pub fn train_autoencoder(
    dataset: &[VolumeSample],
    cfg: &AeTrainConfig,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::contract(
            "cannot train the autoencoder on an empty dataset",
        ));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::contract(
            "epochs, batch size and learning rate must be positive",
        ));
    }
    let clean: Vec<Tensor> = dataset.iter().map(|s| min_max_volume(&s.volume)).collect();
    let mut model = AutoencoderModel::new(cfg.arch.clone(), cfg.seed)?;
    let mut adam = AdamState::new(&model.params(), cfg.adam.clone());
    let mut shuffle_rng = rng_for(cfg.seed, stream::SHUFFLE);
    let mut noise_rng = rng_for(cfg.seed, stream::NOISE);
    let mut order: Vec<usize> = (0..clean.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.min_lr)?;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let targets: Vec<&Tensor> = batch.iter().map(|&i| &clean[i]).collect();
            let noisy: Vec<Tensor> = targets
                .iter()
                .map(|t| add_noise_with(t, &mut noise_rng))
                .collect();
            let noisy_refs: Vec<&Tensor> = noisy.iter().collect();

            let mut tape = Tape::new();
            let x = tape.constant(as_batch(&noisy_refs, cfg.arch.input_shape)?);
            let y = tape.constant(as_batch(&targets, cfg.arch.input_shape)?);
            let out = model.forward(&mut tape, x, BnMode::Train, false)?;
            let loss = tape.mse_loss(out.reconstruction, y)?;
            epoch_loss += tape.value(loss).data()[0] * batch.len() as f64;

            let grads = tape.backward(loss)?;
            let mut params = model.params_mut();
            for (p, v) in params.iter_mut().zip(&out.params) {
                p.zero_grad();
                grads.accumulate_into(*v, p);
            }
            adam.step(&mut params, lr);
        }
        let mean = epoch_loss / clean.len() as f64;
        debug!("autoencoder epoch {} loss {mean:.6}", epoch + 1);
        trace.push(mean);
    }
    Ok((model, trace))
}

/// One latent row per sample, in input order, from clean normalized input
/// with batch-norm in eval mode.
pub fn extract_features(
    model: &AutoencoderModel,
    dataset: &[VolumeSample],
) -> Result<FeatureMatrix> {
    use rayon::prelude::*;
    let rows = dataset
        .par_iter()
        .map(|s| {
            let features = model.encode(&min_max_volume(&s.volume))?;
            Ok(FeatureRow {
                sample_id: s.sample_id.clone(),
                label: s.label,
                features,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(rows)
}
