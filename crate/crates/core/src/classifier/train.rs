use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, Model};
use super::{cross_entropy, cross_entropy_grad};
use crate::colorspace::ImageTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: usize,
}

/// Minibatch SGD with momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 12,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 16,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub architecture: String,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

/// Fraction of `data` whose argmax prediction equals the label.
pub fn evaluate_accuracy(model: &Model, data: &[LabeledImage]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in data {
        if model.predict(&s.image)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains a freshly initialized model; deterministic for a fixed `config.seed`.
pub fn train(
    train_set: &[LabeledImage],
    validation: &[LabeledImage],
    architecture: Architecture,
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    let mut seen = vec![false; architecture.classes];
    for s in train_set.iter().chain(validation) {
        if s.label >= architecture.classes {
            return Err(Error::InvalidLabel {
                label: s.label,
                classes: architecture.classes,
            });
        }
        seen[s.label] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Dataset("training needs at least two classes".into()));
    }

    let name = architecture.name.clone();
    let mut model = Model::init(architecture, config.seed)?;
    let mut velocity: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Vec<f64>> = velocity.iter().map(|v| vec![0.0; v.len()]).collect();
            for &i in batch {
                let sample = &train_set[i];
                let (z, cache) = model.forward_cached(&sample.image)?;
                let loss = cross_entropy(&z, sample.label)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                loss_sum += loss;
                if z.argmax() == sample.label {
                    correct += 1;
                }
                let dz = cross_entropy_grad(&z, sample.label)?;
                model.backward_params(&cache, &dz, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, v), g) in model.params_mut().zip(&mut velocity).zip(&grads) {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    let step = gi * scale + config.weight_decay * *pi;
                    *vi = config.momentum * *vi + step;
                    *pi -= config.learning_rate * *vi;
                }
            }
        }
        let mean_loss = loss_sum / train_set.len().max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / train_set.len().max(1) as f64,
            validation_accuracy: evaluate_accuracy(&model, validation)?,
        });
    }

    let report = TrainReport {
        architecture: name,
        seed: config.seed,
        train_accuracy: evaluate_accuracy(&model, train_set)?,
        validation_accuracy: evaluate_accuracy(&model, validation)?,
        epochs: history,
    };
    Ok((model, report))
}
