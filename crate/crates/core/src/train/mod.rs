//! Alternating two-time-scale GAN training, metrics, checkpoint plumbing
//! and inference.

mod config;

pub use config::{Artifacts, LossConfig, RunConfig, RunManifest, TaskMode, TrainConfig, PRESETS};

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState, StoredTensor};
use crate::data::{BatchCursor, Dataset};
use crate::error::{Error, Result};
use crate::layers::Module;
use crate::losses::{
    feature_matching_loss, hinge_g_loss, perceptual_loss, total_d_loss, total_g_loss, ConvFeatureExtractor,
    FeatureExtractor,
};
use crate::networks::{build_discriminator, sample_noise, sample_noise_with, MultiScaleDiscriminator, Translator};
use crate::optim::Adam;
use crate::tensor::{no_grad, Float, Tensor};

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_p: f64,
    pub loss_fm: f64,
    /// Excluded from determinism comparisons.
    pub wall_ms: f64,
}

impl Metrics {
    pub const HEADER: &'static str = "step\tL_D\tL_G_adv\tL_P\tL_FM\twall_ms";

    /// Every field but the wall-clock time.
    pub fn deterministic_part(&self) -> (u64, [u64; 4]) {
        (self.step, [self.loss_d, self.loss_g_adv, self.loss_p, self.loss_fm].map(f64::to_bits))
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("malformed metrics line {line:?}")))
        };
        if f.len() != 6 {
            return Err(Error::Data(format!("metrics line needs 6 fields: {line:?}")));
        }
        Ok(Metrics {
            step: f[0].parse().map_err(|_| Error::Data(format!("malformed step in {line:?}")))?,
            loss_d: num(1)?,
            loss_g_adv: num(2)?,
            loss_p: num(3)?,
            loss_fm: num(4)?,
            wall_ms: num(5)?,
        })
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{:.3}",
            self.step, self.loss_d, self.loss_g_adv, self.loss_p, self.loss_fm, self.wall_ms
        )
    }
}

fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Numeric(format!("non-finite value produced by {op} at training step {step}")),
        Error::Numeric(m) => Error::Numeric(format!("{m} at training step {step}")),
        other => other,
    }
}

/// Model, optimizers and stream positions of a training run.
pub struct Trainer {
    pub config: RunConfig,
    pub translator: Translator<f32>,
    pub disc: MultiScaleDiscriminator<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub extractor: ConvFeatureExtractor<f32>,
    pub step: u64,
    pub cursor: BatchCursor,
    pub noise_rng: ChaCha8Rng,
}

const NOISE_STREAM: u64 = 1;

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.train.seed);
        let translator = Translator::new(&config.net, &mut init)?;
        let disc = build_discriminator(&config.net, &mut init)?;
        let extractor = match &config.loss.extractor_weights {
            Some(path) => {
                let file = Checkpoint::load(path)?;
                ConvFeatureExtractor::from_named(&file.tensor_map("extractor.")?, &path.display().to_string())?
            }
            None => ConvFeatureExtractor::seeded(config.loss.extractor_seed)?,
        };
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        noise_rng.set_stream(NOISE_STREAM);
        Ok(Trainer {
            opt_g: Adam::new(config.train.adam_g())?,
            opt_d: Adam::new(config.train.adam_d())?,
            cursor: BatchCursor::new(config.data.shuffle_seed),
            config,
            translator,
            disc,
            extractor,
            step: 0,
            noise_rng,
        })
    }

    fn disc_input(&self, image: &Tensor<f32>, content: &Tensor<f32>) -> Result<Tensor<f32>> {
        if self.config.net.d_conditional {
            Tensor::concat(&[image, content], 1)
        } else {
            Ok(image.clone())
        }
    }

    /// One discriminator update followed by one generator update (which
    /// also trains both streams). The generator forward is shared: the
    /// discriminator phase sees it detached and cannot change it.
    pub fn train_step(&mut self, ds: &Dataset) -> Result<Metrics> {
        let step = self.step + 1;
        self.step_inner(ds).map_err(|e| at_step(step, e))
    }

    fn step_inner(&mut self, ds: &Dataset) -> Result<Metrics> {
        let t0 = Instant::now();
        let batch = ds.next_batch(&mut self.cursor, self.config.train.batch_size)?;
        let (n, _, h, w) = batch.style.dims4("train_step")?;
        let shape = self.translator.noise_shape(n, h, w)?;
        let z0 = sample_noise_with(&shape, &mut self.noise_rng)?;
        let g = self.translator.forward(&z0, &batch.content, &batch.style, true)?;
        let real_in = self.disc_input(&batch.style, &batch.content)?;

        // discriminator phase
        let real = self.disc.forward(&real_in, true)?;
        let fake = self.disc.forward(&self.disc_input(&g.detach(), &batch.content)?, true)?;
        let loss_d = total_d_loss(&real.scores, &fake.scores)?;
        let grads = loss_d.backward()?;
        self.opt_d.step(&mut self.disc, &grads)?;
        drop(grads);

        // generator phase, against the updated discriminator
        let fake = self.disc.forward(&self.disc_input(&g, &batch.content)?, false)?;
        let real = no_grad(|| self.disc.forward(&real_in, false))?;
        let target = match self.config.train.task {
            TaskMode::SemanticSynthesis => &batch.style,
            _ => &batch.content,
        };
        let dist = self.config.loss.distance;
        let loss = total_g_loss(
            self.config.loss.weights(),
            hinge_g_loss(&fake.scores)?,
            perceptual_loss(&self.extractor, &g, target, dist)?,
            feature_matching_loss(&fake.feats, &real.feats, dist)?,
        )?;
        let grads = loss.total.backward()?;
        self.opt_g.step(&mut self.translator, &grads)?;
        self.step += 1;
        Ok(Metrics {
            step: self.step,
            loss_d: loss_d.item() as f64,
            loss_g_adv: loss.adversarial.item() as f64,
            loss_p: loss.perceptual.item() as f64,
            loss_fm: loss.feature_matching.item() as f64,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs until `until` steps are done, calling `on_step` after each.
    pub fn run(&mut self, ds: &Dataset, until: u64, mut on_step: impl FnMut(&mut Self, &Metrics) -> Result<()>) -> Result<()> {
        while self.step < until {
            let m = self.train_step(ds)?;
            on_step(self, &m)?;
        }
        Ok(())
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut shapes = BTreeMap::new();
        for (prefix, module) in [("g", &mut self.translator as &mut dyn Module<f32>), ("d", &mut self.disc)] {
            module.visit_state(prefix, &mut |name, _, t| {
                tensors.push(StoredTensor::from_tensor(name, t));
                shapes.insert(name.to_string(), t.shape().to_vec());
            });
        }
        for (prefix, module, opt) in [("g", "opt_g", &self.opt_g), ("d", "opt_d", &self.opt_d)] {
            for (which, buffers) in [("m", &opt.m), ("v", &opt.v)] {
                for (name, data) in buffers {
                    let shape = &shapes[&format!("{prefix}.{name}")];
                    tensors.push(StoredTensor::from_slice(&format!("{module}.{which}.{name}"), shape, data));
                }
            }
        }
        for (name, t) in self.extractor.named() {
            tensors.push(StoredTensor::from_tensor(&format!("extractor.{name}"), &t));
        }
        Checkpoint {
            step: self.step,
            config: self.config.to_toml(),
            rng: RngState::capture(&self.noise_rng),
            cursor: self.cursor,
            counters: [("opt_g.t".to_string(), self.opt_g.t), ("opt_d.t".to_string(), self.opt_d.t)].into(),
            tensors,
        }
    }

    /// Rebuilds a trainer from a checkpoint. With `expected`, the stored
    /// architecture must match it.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&RunConfig>) -> Result<Self> {
        let config = RunConfig::from_toml(&ckpt.config)?;
        if let Some(e) = expected {
            if e.net != config.net {
                return Err(Error::Config("checkpoint architecture does not match the requested [net] config".into()));
            }
        }
        let mut stored = config.clone();
        stored.loss.extractor_weights = None;
        let mut tr = Trainer::new(stored)?;
        tr.config = config;
        load_module(&mut tr.translator, "g", ckpt)?;
        load_module(&mut tr.disc, "d", ckpt)?;
        for (module, opt) in [("opt_g", &mut tr.opt_g), ("opt_d", &mut tr.opt_d)] {
            opt.t = *ckpt
                .counters
                .get(&format!("{module}.t"))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing counter {module}.t")))?;
            for (which, buffers) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                let prefix = format!("{module}.{which}.");
                for t in ckpt.tensors.iter().filter(|t| t.name.starts_with(&prefix)) {
                    buffers.insert(t.name[prefix.len()..].to_string(), t.to_vec()?);
                }
            }
        }
        tr.extractor = ConvFeatureExtractor::from_named(&ckpt.tensor_map("extractor.")?, &FeatureExtractor::identity(&tr.extractor))?;
        tr.step = ckpt.step;
        tr.cursor = ckpt.cursor;
        tr.noise_rng = ckpt.rng.restore();
        Ok(tr)
    }
}

/// Overwrites every tensor of `module` with the checkpoint entry
/// `prefix.name`; shapes must agree.
pub fn load_module<T: Float>(module: &mut dyn Module<T>, prefix: &str, ckpt: &Checkpoint) -> Result<()> {
    let mut err = None;
    module.visit_state(prefix, &mut |name, _, t| {
        if err.is_some() {
            return;
        }
        let r = match ckpt.get(name) {
            None => Err(Error::CorruptCheckpoint(format!("missing tensor {name}"))),
            Some(s) if s.shape != t.shape() => Err(Error::Config(format!(
                "checkpoint tensor {name} has shape {:?}, network expects {:?}",
                s.shape,
                t.shape()
            ))),
            Some(s) => s.to_tensor().map(|v| *t = if t.is_tracked() { v.requires_grad() } else { v }),
        };
        if let Err(e) = r {
            err = Some(e);
        }
    });
    err.map_or(Ok(()), Err)
}

/// The generator half of a checkpoint.
pub fn load_translator(ckpt: &Checkpoint) -> Result<(RunConfig, Translator<f32>)> {
    let config = RunConfig::from_toml(&ckpt.config)?;
    let mut tr = Translator::from_seed(&config.net, 0)?;
    load_module(&mut tr, "g", ckpt)?;
    Ok((config, tr))
}

/// Runs the generator exactly as in training (batch statistics, one power
/// iteration), then restores its buffers, so repeated calls are identical.
pub fn translate(
    tr: &mut Translator<f32>,
    content: &Tensor<f32>,
    style: &Tensor<f32>,
    noise_seed: u64,
) -> Result<Tensor<f32>> {
    let (n, _, h, w) = content.dims4("translate")?;
    let s = tr.noise_shape(n, h, w)?;
    let z0 = sample_noise(s[0], s[1], s[2], s[3], noise_seed)?;
    let saved = tr.state("");
    let out = no_grad(|| tr.forward(&z0, content, style, true));
    tr.restore_state(saved);
    out
}

/// Mean of the first and last `window` values.
pub fn window_means(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if window == 0 || values.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..window]), mean(&values[values.len() - window..])))
}
