//! Single-sample Adam training with seeded shuffling, train-only augmentation
//! and patience-based early stopping on the validation loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{encode_targets, CodecConfig, TargetMaps};
use crate::error::{Error, Result};
use crate::io::Sample;
use crate::losses::{total_loss, FocalParams, LossWeights};
use crate::net::{AdamConfig, AdamState, ModelCheckpoint, TinyNet};
use crate::synth::{augment, AugmentConfig};
use crate::tensor::Tensor;

pub const DEFAULT_EPOCHS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub focal: FocalParams,
    /// Seeds weight initialization, shuffling and augmentation.
    pub seed: u64,
    /// `None` disables augmentation. The seed inside is replaced per step.
    pub augment: Option<AugmentConfig>,
    /// Epochs without a significant validation improvement before stopping.
    pub patience: usize,
    /// Relative decrease that counts as significant.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            seed: 0,
            augment: Some(AugmentConfig::default()),
            patience: 10,
            min_improvement: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.min_improvement) {
            return Err(Error::invalid("min_improvement must lie in [0, 1)"));
        }
        self.weights.validate()?;
        self.focal.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Weights and optimizer state at the best validation epoch.
    pub checkpoint: ModelCheckpoint,
}

/// One line per epoch: `epoch train_loss val_loss`.
pub fn render_log(log: &[EpochRecord]) -> String {
    let mut s = String::from("# epoch train_loss val_loss\n");
    for r in log {
        s.push_str(&format!("{} {:.9} {:.9}\n", r.epoch, r.train_loss, r.val_loss));
    }
    s
}

/// Codec configuration shared by every sample, derived from the image size.
pub fn codec_for(samples: &[Sample]) -> Result<CodecConfig> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("no samples"))?;
    let (w, h) = (first.annotation.image_width, first.annotation.image_height);
    if let Some(odd) = samples
        .iter()
        .find(|s| (s.annotation.image_width, s.annotation.image_height) != (w, h))
    {
        return Err(Error::invalid(format!(
            "sample {} is {}x{}, expected {w}x{h}",
            odd.name, odd.annotation.image_width, odd.annotation.image_height
        )));
    }
    CodecConfig::for_input(w, h)
}

/// Runs one forward/backward/update step and returns the loss before the
/// update.
pub fn train_step(
    net: &mut TinyNet,
    adam: &mut AdamState,
    image: &Tensor,
    targets: &TargetMaps,
    weights: &LossWeights,
    focal: &FocalParams,
    step: usize,
) -> Result<f64> {
    let (pred, cache) = net.forward(image)?;
    let loss = total_loss(&pred, targets, weights, focal)?;
    if !loss.value.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let grads = net.backward(&loss.grads, &cache)?;
    adam.step(&mut net.params, &grads)?;
    Ok(loss.value)
}

pub fn evaluate_loss(
    net: &TinyNet,
    data: &[(Tensor, TargetMaps)],
    weights: &LossWeights,
    focal: &FocalParams,
) -> Result<f64> {
    let mut sum = 0.0;
    for (image, targets) in data {
        sum += total_loss(&net.predict(image)?, targets, weights, focal)?.value;
    }
    Ok(sum / data.len() as f64)
}

/// Repeatedly fits a single sample. Returns the loss before each step and,
/// last, the loss after the final step.
pub fn overfit(sample: &Sample, steps: usize, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let codec = codec_for(std::slice::from_ref(sample))?;
    let targets = encode_targets(&sample.annotation, &codec)?;
    let mut net = TinyNet::desk_scale(cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam, &net.params);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        losses.push(train_step(
            &mut net,
            &mut adam,
            &sample.image,
            &targets,
            &cfg.weights,
            &cfg.focal,
            step,
        )?);
    }
    let data = [(sample.image.clone(), targets)];
    losses.push(evaluate_loss(&net, &data, &cfg.weights, &cfg.focal)?);
    Ok(losses)
}

fn training_pair(
    sample: &Sample,
    clean: &TargetMaps,
    codec: &CodecConfig,
    augment_cfg: Option<&AugmentConfig>,
    seed: u64,
) -> Result<(Tensor, TargetMaps)> {
    let Some(base) = augment_cfg else {
        return Ok((sample.image.clone(), clean.clone()));
    };
    let cfg = AugmentConfig { seed, ..base.clone() };
    let out = augment(&sample.image, &sample.annotation, &cfg)?;
    match encode_targets(&out.annotation, codec) {
        Ok(targets) => Ok((out.image, targets)),
        // Rescaling can push two centers into one cell; train on the clean
        // sample rather than drop the step.
        Err(Error::EncodingCollision { .. }) => Ok((sample.image.clone(), clean.clone())),
        Err(e) => Err(e),
    }
}

/// Trains on `train`, selecting the checkpoint with the lowest loss on `val`.
/// An empty `val` falls back to the unaugmented training samples.
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let val_set = if val_set.is_empty() { train_set } else { val_set };
    let all: Vec<Sample> = train_set.iter().chain(val_set).cloned().collect();
    let codec = codec_for(&all)?;

    let encode = |set: &[Sample]| -> Result<Vec<(Tensor, TargetMaps)>> {
        set.iter()
            .map(|s| Ok((s.image.clone(), encode_targets(&s.annotation, &codec)?)))
            .collect()
    };
    let clean_train = encode(train_set)?;
    let val = encode(val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = TinyNet::desk_scale(cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam, &net.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelCheckpoint)> = None;
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut step = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for &i in &order {
            let aug_seed: u64 = rng.random();
            let (image, targets) = training_pair(
                &train_set[i],
                &clean_train[i].1,
                &codec,
                cfg.augment.as_ref(),
                aug_seed,
            )?;
            train_sum += train_step(
                &mut net,
                &mut adam,
                &image,
                &targets,
                &cfg.weights,
                &cfg.focal,
                step,
            )?;
            step += 1;
        }
        let val_loss = evaluate_loss(&net, &val, &cfg.weights, &cfg.focal)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        log.push(EpochRecord {
            epoch,
            train_loss: train_sum / order.len() as f64,
            val_loss,
        });

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            let ckpt = ModelCheckpoint {
                net: net.clone(),
                adam: Some(adam.clone()),
                codec: codec.clone(),
            };
            best = Some((epoch, val_loss, ckpt));
        }
        if val_loss < reference * (1.0 - cfg.min_improvement) {
            reference = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }

    let (best_epoch, best_val_loss, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_loss,
        stopped_early,
        checkpoint,
    })
}
