//! Small convolutional classifiers: logits, losses, success predicates,
//! training and checkpoints.

mod checkpoint;
mod layers;
mod model;
mod train;

pub use checkpoint::{load, load_from_bytes, save, save_to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Conv2d, Dense, LayerSpec, MaxPool, Relu};
pub use model::{Architecture, ForwardCache, Model};
pub use train::{evaluate_accuracy, train, LabeledImage, TrainConfig, TrainReport};

use crate::error::{Error, Result};

/// Pre-softmax class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest logit (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax_excluding(&self.0, usize::MAX).0
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.0.len() {
            return Err(Error::InvalidLabel {
                label,
                classes: self.0.len(),
            });
        }
        Ok(())
    }
}

/// Largest entry whose index is not `skip`, as `(index, value)`.
fn argmax_excluding(z: &[f64], skip: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, &v) in z.iter().enumerate() {
        if i != skip && (best.0 == usize::MAX || v > best.1) {
            best = (i, v);
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `−log softmax(z)[y]`.
pub fn cross_entropy(z: &Logits, y: usize) -> Result<f64> {
    z.check_label(y)?;
    Ok((log_sum_exp(&z.0) - z.0[y]).max(0.0))
}

/// Gradient of [`cross_entropy`] with respect to the logits: `softmax(z) − e_y`.
pub fn cross_entropy_grad(z: &Logits, y: usize) -> Result<Vec<f64>> {
    z.check_label(y)?;
    let lse = log_sum_exp(&z.0);
    let mut g: Vec<f64> = z.0.iter().map(|v| (v - lse).exp()).collect();
    g[y] -= 1.0;
    Ok(g)
}

/// Signed logit gap the adversary is pushing up: for a target `t`,
/// `Z_t − max_{i≠t} Z_i`; untargeted on the true class `y`, `max_{i≠y} Z_i − Z_y`.
pub fn logit_margin(z: &Logits, label: usize, targeted: bool) -> Result<f64> {
    z.check_label(label)?;
    let (_, other) = argmax_excluding(&z.0, label);
    Ok(if targeted {
        z.0[label] - other
    } else {
        other - z.0[label]
    })
}

/// Margin loss `f`: targeted `max(max_{i≠t} Z_i − Z_t, −κ)`,
/// untargeted `max(Z_y − max_{i≠y} Z_i, −κ)`.
pub fn margin_loss(z: &Logits, label: usize, kappa: f64, targeted: bool) -> Result<f64> {
    Ok((-logit_margin(z, label, targeted)?).max(-kappa))
}

/// Subgradient of [`margin_loss`] with respect to the logits (zero once clamped).
pub fn margin_loss_grad(z: &Logits, label: usize, kappa: f64, targeted: bool) -> Result<Vec<f64>> {
    let gap = logit_margin(z, label, targeted)?;
    let mut g = vec![0.0; z.classes()];
    if -gap > -kappa {
        let (other, _) = argmax_excluding(&z.0, label);
        let sign = if targeted { 1.0 } else { -1.0 };
        g[other] += sign;
        g[label] -= sign;
    }
    Ok(g)
}

/// Untargeted: `Z_y + κ < max_{i≠y} Z_i`; targeted: `Z_t > max_{i≠t} Z_i + κ`.
pub fn is_adversarial(z: &Logits, y: usize, target: Option<usize>, kappa: f64) -> Result<bool> {
    z.check_label(y)?;
    Ok(match target {
        Some(t) => logit_margin(z, t, true)? > kappa,
        None => logit_margin(z, y, false)? > kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(v: &[f64]) -> Logits {
        Logits(v.to_vec())
    }

    #[test]
    fn uniform_cross_entropy_is_log_k() {
        let ce = cross_entropy(&z(&[0.3; 10]), 4).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        assert!((ce - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let ce = cross_entropy(&z(&[60.0, 0.0, 0.0]), 0).unwrap();
        assert!(ce >= 0.0 && ce < 1e-20);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            cross_entropy(&z(&[1.0, 2.0]), 2),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn margin_loss_examples() {
        let logits = z(&[5.0, 1.0, 1.0]);
        assert_eq!(margin_loss(&logits, 0, 0.0, true).unwrap(), 0.0);
        assert_eq!(margin_loss(&logits, 0, 0.0, false).unwrap(), 4.0);
        assert_eq!(margin_loss(&z(&[1.0, 1.0, 5.0]), 0, 20.0, false).unwrap(), -4.0);
    }

    #[test]
    fn adversarial_predicate_examples() {
        assert!(is_adversarial(&z(&[0.0, 10.0]), 0, None, 0.0).unwrap());
        assert!(!is_adversarial(&z(&[0.0, 10.0]), 0, None, 20.0).unwrap());
        assert!(is_adversarial(&z(&[0.0, 10.0, 2.0]), 0, Some(1), 5.0).unwrap());
        assert!(!is_adversarial(&z(&[0.0, 10.0, 2.0]), 0, Some(2), 0.0).unwrap());
    }

    #[test]
    fn margin_gradient_is_zero_when_clamped() {
        let g = margin_loss_grad(&z(&[5.0, 1.0, 1.0]), 0, 0.0, true).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = margin_loss_grad(&z(&[5.0, 1.0, 2.0]), 0, 0.0, false).unwrap();
        assert_eq!(g, vec![1.0, 0.0, -1.0]);
    }
}
