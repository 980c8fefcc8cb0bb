//! Optimizer, augmentation, LR synthesis, metrics and the training loop.

pub mod adam;
pub mod augment;
pub mod metrics;
pub mod resample;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, AdamConfig};
pub use augment::{TrainSample, Transform};
pub use metrics::{psnr, ssim};
pub use resample::bicubic_downsample;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{FgMamba, ModelConfig, MIN_INPUT_EXTENT};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// HR patch side; clipped to the image and rounded down to a multiple of the scale.
    pub patch_size: usize,
    pub adam: AdamConfig,
    pub augment: bool,
    pub seed: u64,
    /// Validation cadence in steps; the final step is always validated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            patch_size: 64,
            adam: AdamConfig::default(),
            augment: true,
            seed: 0,
            eval_every: 100,
        }
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub validation: Option<Validation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub psnr: f64,
    pub ssim: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} loss={}", self.step, self.loss)?;
        if let Some(v) = self.validation {
            write!(f, " psnr={} ssim={}", v.psnr, v.ssim)?;
        }
        Ok(())
    }
}

/// HR images, each (C, H, W) with values in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn new(images: Vec<Tensor<f32>>) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyDataset)?;
        let channels = first.shape().first().copied().unwrap_or(0);
        for img in &images {
            if img.rank() != 3 || img.shape()[0] != channels {
                return Err(Error::InvalidInput(format!(
                    "dataset images must be (C, H, W) with C = {channels}, got {:?}",
                    img.shape()
                )));
            }
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].shape()[0]
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    /// Largest usable patch side across all images.
    fn patch_side(&self, requested: usize, scale: usize) -> Result<usize> {
        let smallest = self
            .images
            .iter()
            .map(|t| t.shape()[1].min(t.shape()[2]))
            .min()
            .unwrap_or(0);
        let side = requested.min(smallest) / scale * scale;
        if side < MIN_INPUT_EXTENT * scale {
            return Err(Error::InvalidInput(format!(
                "patches of {side} pixels are too small for scale {scale}; need at least {}",
                MIN_INPUT_EXTENT * scale
            )));
        }
        Ok(side)
    }

    /// Random crop, bicubic LR synthesis and optional augmentation.
    pub fn sample<R: Rng>(&self, rng: &mut R, side: usize, scale: usize, augment: bool) -> Result<TrainSample<f32>> {
        let source = rng.gen_range(0..self.images.len());
        let img = &self.images[source];
        let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let oy = rng.gen_range(0..=h - side);
        let ox = rng.gen_range(0..=w - side);
        let hr = Tensor::from_fn(vec![c, side, side], |i| {
            let (ch, rest) = (i / (side * side), i % (side * side));
            img.data()[(ch * h + oy + rest / side) * w + ox + rest % side]
        });
        let lr = bicubic_downsample(&hr, scale)?;
        let sample = TrainSample {
            hr,
            lr,
            source,
            offset: (oy, ox),
            transform: Transform::IDENTITY,
        };
        Ok(if augment {
            sample.augment(Transform::sample(rng))
        } else {
            sample
        })
    }
}

fn stack(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::new(shape, data)?)
}

/// Mean PSNR / SSIM (peak 1) of SR reconstructions of every dataset image
/// from its bicubic LR version.
pub fn validate(model: &FgMamba<f32>, data: &Dataset) -> Result<Validation> {
    let s = model.config().scale;
    let (mut p, mut q) = (0.0, 0.0);
    for img in data.images() {
        let (c, h, w) = (img.shape()[0], img.shape()[1] / s * s, img.shape()[2] / s * s);
        let hr = Tensor::from_fn(vec![1, c, h, w], |i| {
            let (ch, rest) = (i / (h * w), i % (h * w));
            img.data()[(ch * img.shape()[1] + rest / w) * img.shape()[2] + rest % w]
        });
        let lr = bicubic_downsample(&hr, s)?;
        let sr = model.infer(&lr)?;
        p += psnr(&sr, &hr, 1.0)?;
        q += ssim(&sr, &hr, 1.0)?;
    }
    let n = data.len() as f64;
    Ok(Validation {
        psnr: p / n,
        ssim: q / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FgMamba<f32>,
    pub log: Vec<LogRecord>,
}

/// Trains a freshly initialized model (seeded by `cfg.seed`) with L1 loss
/// and Adam. Every record is also passed to `on_record` as it is produced.
pub fn train_loop(
    model_config: ModelConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    let model = FgMamba::new(model_config, cfg.seed)?;
    train_model(model, data, cfg, on_record)
}

/// Continues training an existing model.
pub fn train_model(
    mut model: FgMamba<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    let mc = *model.config();
    if data.channels() != mc.in_channels {
        return Err(Error::InvalidInput(format!(
            "dataset has {} channels, model expects {}",
            data.channels(),
            mc.in_channels
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let side = data.patch_side(cfg.patch_size, mc.scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let samples = (0..cfg.batch_size)
            .map(|_| data.sample(&mut rng, side, mc.scale, cfg.augment))
            .collect::<Result<Vec<_>>>()?;
        let lr = stack(&samples.iter().map(|s| &s.lr).collect::<Vec<_>>())?;
        let hr = stack(&samples.iter().map(|s| &s.hr).collect::<Vec<_>>())?;

        let mut tape = Tape::new();
        let x = tape.constant(lr);
        let (bindings, y) = model.forward(&mut tape, x)?;
        let target = tape.constant(hr);
        let loss_var = tape.l1_loss(y, target)?;
        let loss = tape.value(loss_var).item() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        tape.backward(loss_var)?;
        opt.step(model.params_mut(), &bindings.gradients(&tape))?;

        let validation = if step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            Some(validate(&model, data)?)
        } else {
            None
        };
        let record = LogRecord { step, loss, validation };
        on_record(&record);
        log.push(record);
    }
    Ok(TrainOutcome { model, log })
}
