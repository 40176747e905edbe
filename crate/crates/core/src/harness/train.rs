use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::oracle::probabilities;
use super::{ModelCheckpoint, TrainingMeta};
use crate::augment::{augment_batch, AugmentParams, Augmentation};
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::image::{argmax, Image};
use crate::nn::{soft_cross_entropy, ArchConfig, Mode, Network, Sgd, Tensor};
use crate::rng::{child, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epoch fractions at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    /// Standard augmentation applied to every regime: random horizontal flip
    /// and a random translation of up to `shift` pixels (pad-and-crop).
    pub flip: bool,
    pub shift: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            flip: true,
            shift: 4,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("lr must be positive, momentum in [0, 1), weight decay >= 0"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.epochs as f64;
        let drops = self.lr_milestones.iter().filter(|&&m| progress >= m).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub augmentation: Augmentation,
    pub seed: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Agreement of the prediction with the dominant label of each training target.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Residual CNN with parameters drawn from `seed`.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<Network<f32>> {
    Network::init(arch, &mut seeded(seed))
}

pub fn evaluate_accuracy(net: &Network<f32>, set: &LabeledSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let probs = probabilities(net, &set.images);
    let correct = probs
        .iter()
        .zip(&set.labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    correct as f64 / set.len() as f64
}

fn standard_augment<R: Rng + ?Sized>(img: &Image, hyper: &Hyperparams, rng: &mut R) -> Image {
    let mut out = if hyper.flip && rng.random_bool(0.5) {
        img.flip_horizontal()
    } else {
        img.clone()
    };
    if hyper.shift > 0 {
        let s = hyper.shift as i64;
        let dx = rng.random_range(-s..=s) as isize;
        let dy = rng.random_range(-s..=s) as isize;
        if dx != 0 || dy != 0 {
            out = out.shifted(dx, dy);
        }
    }
    out
}

/// Trains `model` in place under `regime` and returns the checkpoint.
///
/// Mixed samples use the soft target `λ·onehot(a) + (1-λ)·onehot(b)`, whose
/// cross-entropy equals `λ·CE(a) + (1-λ)·CE(b)`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: Network<f32>,
    data: &LabeledSet,
    test: Option<&LabeledSet>,
    regime: Augmentation,
    aug: &AugmentParams,
    hyper: &Hyperparams,
    seed: u64,
    log: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<ModelCheckpoint> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let k = model.num_classes();
    if data.labels.iter().any(|&l| l >= k) {
        return Err(Error::invalid("training label out of range for the model"));
    }
    let mut opt = Sgd::<f32>::new(model.params.len(), hyper.momentum, hyper.weight_decay);
    let mut grads = vec![0.0f32; model.params.len()];
    let mut final_loss = f64::NAN;
    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at(epoch);
        let mut rng = child(seed, "train-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for batch in order.chunks(hyper.batch_size) {
            let images: Vec<Image> = batch
                .iter()
                .map(|&i| standard_augment(&data.images[i], hyper, &mut rng))
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let mixed = augment_batch(&images, &labels, regime, aug, &mut rng)?;
            let targets: Vec<f32> = mixed.iter().flat_map(|m| m.target(k)).collect();
            let x = Tensor::from_images(mixed.iter().map(|m| &m.image));
            let trace = model.forward(x, Mode::Train);
            let (loss, dlogits) = soft_cross_entropy(&trace.logits, &targets, k);
            if !loss.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    detail: format!("non-finite loss {loss}"),
                });
            }
            grads.fill(0.0);
            model.backward(&trace, &dlogits, 0, Some(&mut grads));
            opt.step(&mut model.params, &grads, lr);
            model.update_running_stats(&trace);
            loss_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();
            for (i, t) in targets.chunks(k).enumerate() {
                if argmax(trace.logits_of(i)) == argmax(t) {
                    correct += 1;
                }
            }
        }
        final_loss = loss_sum / seen as f64;
        let test_accuracy = test.map(|t| evaluate_accuracy(&model, t));
        log(&EpochRecord {
            augmentation: regime,
            seed,
            epoch,
            lr,
            loss: final_loss,
            train_accuracy: correct as f64 / seen as f64,
            test_accuracy,
        })?;
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::TrainingFailure {
            epoch: hyper.epochs.saturating_sub(1),
            detail: "non-finite parameters".into(),
        });
    }
    let final_top1 = evaluate_accuracy(&model, test.unwrap_or(data));
    Ok(ModelCheckpoint {
        network: model,
        meta: TrainingMeta {
            augmentation: regime,
            seed,
            epochs: hyper.epochs,
            final_top1,
            final_loss,
        },
    })
}
