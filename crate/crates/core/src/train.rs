//! Minibatch SGD training loop.
//!
//! Each epoch reshuffles the set with its own RNG stream, optionally passes
//! every minibatch through the DCT augmenter before the forward pass, and
//! feeds the per-minibatch training accuracies to the dropout schedule.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, Augmenter};
use crate::dataset::LabeledSet;
use crate::dropout::{DropoutState, EpochStats};
use crate::error::{invalid, Error, Result};
use crate::image::ImageTensor;
use crate::nn::layers::argmax;
use crate::nn::{sgd_step, Mode, ModelParams, NetworkConfig, ParamSet};
use crate::rng::{purpose, stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "p")]
pub enum DropoutPolicy {
    /// Scheduled by [`DropoutState`].
    Adaptive,
    Fixed(f64),
}

impl DropoutPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DropoutPolicy::Fixed(p) if !(0.0..1.0).contains(&p) => {
                Err(invalid(format!("dropout probability {p} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains on the raw images.
    pub augmentation: Option<AugmentConfig>,
    pub dropout: DropoutPolicy,
    /// Workers for minibatch augmentation. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 40,
            seed: 0,
            augmentation: None,
            dropout: DropoutPolicy::Adaptive,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if self.threads == 0 {
            return Err(invalid("threads must be positive"));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        self.dropout.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean cross-entropy over the epoch.
    pub loss: f64,
    /// Training accuracy over the epoch (dropout active, augmented inputs).
    pub accuracy: f64,
    pub min_minibatch_accuracy: f64,
    /// Dropout probability used during this epoch.
    pub dropout_p: f64,
    /// Mean DCT threshold drawn this epoch, when augmenting.
    pub mean_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub trigger_epoch: Option<usize>,
}

impl TrainingLog {
    /// One JSON object per epoch, newline terminated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

pub fn train<T: Scalar>(
    set: &LabeledSet<T>,
    net: &NetworkConfig,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainingLog)> {
    train_with_observer(set, net, config, |_| {})
}

/// Like [`train`], calling `observer` after every epoch.
pub fn train_with_observer<T: Scalar>(
    set: &LabeledSet<T>,
    net: &NetworkConfig,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochLog),
) -> Result<(ModelParams<T>, TrainingLog)> {
    config.validate()?;
    set.validate()?;
    check_compatible(set, net)?;

    let mut model = ModelParams::<T>::init(net.clone(), config.seed)?;
    let mut velocity = ParamSet::zeros_like(&model.params);
    let augmenter = config.augmentation.map(Augmenter::new).transpose()?;
    let mut schedule = DropoutState::new(config.epochs)?;
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..set.len()).collect();

    for epoch in 1..=config.epochs {
        let dropout_p = match config.dropout {
            DropoutPolicy::Adaptive => schedule.current_p(),
            DropoutPolicy::Fixed(p) => p,
        };
        order.sort_unstable();
        order.shuffle(&mut stream(config.seed, &[purpose::SHUFFLE, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut batch_accuracies = Vec::new();
        let mut threshold_sum = 0u64;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| set.labels[i]).collect();
            let augmented;
            let images: Vec<&ImageTensor<T>> = match &augmenter {
                Some(aug) => {
                    let batch: Vec<ImageTensor<T>> = idx.iter().map(|&i| set.images[i].clone()).collect();
                    let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
                    augmented = aug.augment_batch_parallel(&batch, &ids, epoch as u64, config.threads)?;
                    threshold_sum += augmented.samples.iter().map(|s| u64::from(s.threshold)).sum::<u64>();
                    augmented.images.iter().collect()
                }
                None => idx.iter().map(|&i| &set.images[i]).collect(),
            };
            let input = model.pack(&images)?;
            let mut rng = stream(config.seed, &[purpose::DROPOUT, epoch as u64, b as u64]);
            let mode = Mode::Training {
                dropout_p,
                rng: &mut rng,
            };
            let (loss, logits, grads) = model
                .loss_and_gradients(&input, &labels, mode)
                .map_err(|e| diverged(e, epoch, b))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            sgd_step(
                &mut model.params,
                &grads,
                &mut velocity,
                config.learning_rate,
                config.momentum,
            )
            .map_err(|e| diverged(e, epoch, b))?;

            let hits = logits
                .chunks_exact(net.num_classes)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            correct += hits;
            loss_sum += loss * labels.len() as f64;
            batch_accuracies.push(hits as f64 / labels.len() as f64);
        }

        let entry = EpochLog {
            epoch,
            loss: loss_sum / set.len() as f64,
            accuracy: correct as f64 / set.len() as f64,
            min_minibatch_accuracy: batch_accuracies.iter().copied().fold(1.0, f64::min),
            dropout_p,
            mean_threshold: augmenter.as_ref().map(|_| threshold_sum as f64 / set.len() as f64),
        };
        schedule.observe_epoch(&EpochStats::new(batch_accuracies)?)?;
        observer(&entry);
        log.epochs.push(entry);
    }
    log.trigger_epoch = schedule.trigger_epoch();
    Ok((model, log))
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

pub(crate) fn check_compatible<T: Scalar>(set: &LabeledSet<T>, net: &NetworkConfig) -> Result<()> {
    let geometry = (net.input_channels, net.input_height, net.input_width);
    if set.geometry() != geometry {
        return Err(Error::ShapeMismatch {
            expected: format!("{geometry:?}"),
            found: format!("{:?}", set.geometry()),
        });
    }
    if set.num_classes() != net.num_classes {
        return Err(invalid(format!(
            "dataset has {} classes but the network outputs {}",
            set.num_classes(),
            net.num_classes
        )));
    }
    Ok(())
}
