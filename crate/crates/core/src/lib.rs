//! Adversarial image perturbations measured and minimized under the CIEDE2000
//! perceptual color distance, with RGB-norm baselines and a desk-scale
//! evaluation harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`diffcore`]: forward/vector-Jacobian-product contract and composition.
//! - [`colorspace`]: sRGB ↔ linear ↔ XYZ ↔ CIELAB ↔ CIELCH.
//! - [`perceptual`]: ΔE00, C2, texture complexity and weighted C2.
//! - [`classifier`]: small CNNs, losses, success predicates, training, checkpoints.
//! - [`attacks`]: I-FGSM, C&W, PerC-C&W, DDN, PerC-AL and its structure-weighted variant.
//! - [`eval`]: campaign aggregation, input-transform robustness and transferability.
//! - [`tuning`]: held-out grid search for λ and step-size scale.
//! - [`corpus`]: the procedural image corpus the classifiers are trained on.

pub mod attacks;
pub mod classifier;
pub mod colorspace;
pub mod corpus;
pub mod diffcore;
mod dual;
pub mod error;
pub mod eval;
pub mod perceptual;
pub mod tuning;

pub use colorspace::ImageTensor;
pub use error::{Error, Result};
