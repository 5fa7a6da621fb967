use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Mode, Network, PAD_MULTIPLE};
use super::optim::{Adam, AdamConfig};
use super::spec::Variant;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::fringe::{FringeImage, FringeSet};
use crate::rng;

/// Mean squared error over every pixel of every output stack and sample.
///
/// Equivalent to `1/(m·N) Σ_n ‖pred_n − gt_n‖²` averaged over stacks and batch.
/// Returns the loss and its gradient with respect to `predicted`.
pub fn mse_loss(predicted: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if predicted.shape() != target.shape() {
        return Err(Error::shape(format!(
            "loss operands differ: {:?} vs {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    let count = predicted.data().len() as f64;
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros(predicted.shape());
    let scale = (2.0 / count) as f32;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(predicted.data()).zip(target.data()) {
        let d = p - t;
        sum += (d as f64) * (d as f64);
        *g = scale * d;
    }
    Ok((sum / count, grad))
}

/// One training pair: input fringes as channels, target stacks as channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate` (cosine decay); 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub normalization_enabled: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            optimizer: AdamConfig::default(),
            normalization_enabled: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::invalid("final_lr_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_time_s: f64,
}

/// Runs one optimization step on a batch and returns its loss.
pub fn train_step(network: &mut Network, adam: &mut Adam, batch: &Sample, learning_rate: f64) -> Result<f64> {
    let (h, w) = (batch.input.height(), batch.input.width());
    let padded = batch.input.pad_to_multiple(PAD_MULTIPLE);
    let (out, cache) = network.forward(&padded, Mode::Train)?;
    let out = out.crop(h, w)?;
    let (loss, grad) = mse_loss(&out, &batch.target)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss}")));
    }
    let grad = grad.uncrop(padded.height(), padded.width());
    let grads = network.backward(&cache, &grad)?;
    network.update_running_stats(&cache);
    adam.apply(network, &grads, learning_rate);
    Ok(loss)
}

/// Eval-mode loss averaged over samples.
pub fn evaluate_loss(network: &Network, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let out = network.predict(&s.input)?;
        total += mse_loss(&out, &s.target)?.0;
    }
    Ok(total / samples.len().max(1) as f64)
}

fn batch_of(samples: &[Sample], indices: &[usize]) -> Result<Sample> {
    let inputs: Vec<&Tensor> = indices.iter().map(|i| &samples[*i].input).collect();
    let targets: Vec<&Tensor> = indices.iter().map(|i| &samples[*i].target).collect();
    Ok(Sample {
        input: Tensor::stack(&inputs)?,
        target: Tensor::stack(&targets)?,
    })
}

/// Trains `network` in place. `on_epoch` sees every record and may persist checkpoints.
///
/// Validation samples only feed the log.
pub fn train(
    network: &mut Network,
    train_set: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Network, &Adam) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.normalization_enabled != network.spec().normalization {
        return Err(Error::invalid(
            "train config normalization flag disagrees with the network spec",
        ));
    }
    let start = Instant::now();
    let mut adam = Adam::new(network, config.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle = rng::stream(config.seed, "shuffle", 0);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let lr = config.learning_rate_at(epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = batch_of(train_set, chunk)?;
            total += train_step(network, &mut adam, &batch, lr)?;
            batches += 1;
        }
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(network, validation)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record, network, &adam)?;
        log.push(record);
    }
    Ok(log)
}

/// Stacks images as input channels, values in `[0, 1]`.
pub fn images_to_tensor(images: &[&FringeImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("no input fringes"))?;
    if images.iter().any(|im| !im.same_size(first)) {
        return Err(Error::shape("input fringes differ in size"));
    }
    let data = images
        .iter()
        .flat_map(|im| im.data().iter().map(|v| *v as f32))
        .collect();
    Tensor::from_vec([1, images.len(), first.height(), first.width()], data)
}

/// Runs a trained network on raw fringes and splits the result into stacks.
pub fn infer(network: &Network, variant: &Variant, inputs: &[FringeImage]) -> Result<Vec<FringeSet>> {
    variant.validate()?;
    if inputs.len() != variant.kind.input_count() {
        return Err(Error::invalid(format!(
            "variant {:?} takes {} input fringe(s), got {}",
            variant.kind,
            variant.kind.input_count(),
            inputs.len()
        )));
    }
    if network.spec().output_channels() != variant.output_channels() {
        return Err(Error::invalid(format!(
            "network produces {} channels but the variant plans {}",
            network.spec().output_channels(),
            variant.output_channels()
        )));
    }
    let refs: Vec<&FringeImage> = inputs.iter().collect();
    let out = network.predict(&images_to_tensor(&refs)?)?;
    let (h, w) = (out.height(), out.width());
    let mut channel = 0;
    variant
        .output_plan
        .iter()
        .map(|stack| {
            let images = (0..stack.phase_steps)
                .map(|_| {
                    let plane = out.plane(0, channel);
                    channel += 1;
                    FringeImage::from_clamped(w, h, plane.iter().map(|v| *v as f64).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            FringeSet::new(stack.frequency, images)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_network, Variant};

    #[test]
    fn identical_tensors_have_zero_loss() {
        let t = Tensor::from_vec([1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
    }

    #[test]
    fn single_pixel_loss() {
        // m = 6 pixels, N = 4 images, one stack
        let p = Tensor::zeros([1, 4, 2, 3]);
        let mut t = Tensor::zeros([1, 4, 2, 3]);
        t.data_mut()[5] = 1.0;
        let (loss, _) = mse_loss(&p, &t).unwrap();
        assert!((loss - 1.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn loss_ignores_consistent_permutation() {
        let p: Vec<f32> = (0..12).map(|v| (v as f32 * 0.37).sin()).collect();
        let t: Vec<f32> = (0..12).map(|v| (v as f32 * 0.11).cos()).collect();
        let perm = [3, 7, 0, 11, 5, 1, 9, 2, 10, 4, 8, 6];
        let pp: Vec<f32> = perm.iter().map(|i| p[*i]).collect();
        let tp: Vec<f32> = perm.iter().map(|i| t[*i]).collect();
        let a = mse_loss(&Tensor::from_vec([1, 3, 2, 2], p).unwrap(), &Tensor::from_vec([1, 3, 2, 2], t).unwrap()).unwrap().0;
        let b = mse_loss(&Tensor::from_vec([1, 3, 2, 2], pp).unwrap(), &Tensor::from_vec([1, 3, 2, 2], tp).unwrap()).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loss_shape_mismatch() {
        assert!(mse_loss(&Tensor::zeros([1, 1, 2, 2]), &Tensor::zeros([1, 2, 2, 2])).is_err());
    }

    #[test]
    fn infer_checks_input_count_and_shapes_output() {
        let v = Variant::calculation(8.0, 4).unwrap();
        let net = Network::new(build_network(&v, 0.25, true).unwrap(), 1).unwrap();
        let img = FringeImage::filled(12, 10, 0.5).unwrap();
        let sets = infer(&net, &v, std::slice::from_ref(&img)).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].phase_steps(), 4);
        assert_eq!((sets[0].width(), sets[0].height()), (12, 10));
        assert_eq!(sets[0].frequency(), 8.0);
        assert!(infer(&net, &v, &[img.clone(), img]).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig {
            learning_rate: 1e-3,
            final_lr_fraction: 0.1,
            epochs: 11,
            ..TrainConfig::default()
        };
        assert!((c.learning_rate_at(0) - 1e-3).abs() < 1e-15);
        assert!((c.learning_rate_at(10) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
