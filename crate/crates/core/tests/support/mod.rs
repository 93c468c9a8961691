#![allow(dead_code)]

pub mod ciede2000;

use perc_core::classifier::{Architecture, Model};
use perc_core::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random image with components kept away from 0 and 1.
pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
    let data = (0..h * w * 3).map(|_| rng.gen_range(0.05..0.95)).collect();
    ImageTensor::new(h, w, data).unwrap()
}

pub fn perturbed(rng: &mut ChaCha8Rng, x: &ImageTensor, scale: f64) -> ImageTensor {
    let data = x
        .data()
        .iter()
        .map(|v| (v + rng.gen_range(-scale..scale)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(x.height(), x.width(), data).unwrap()
}

pub fn small_model(size: usize, seed: u64) -> Model {
    Model::init(Architecture::small(size, size, 10), seed).unwrap()
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Relative agreement `|a − b| ≤ tol · max(|a|, |b|, floor)`.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

/// Small model trained briefly on the procedural corpus, plus held-out images
/// it classifies correctly.
pub fn trained_fixture() -> &'static (Model, Vec<perc_core::classifier::LabeledImage>) {
    use perc_core::classifier::{train, TrainConfig};
    use std::sync::OnceLock;
    static FIXTURE: OnceLock<(Model, Vec<perc_core::classifier::LabeledImage>)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let train_set = perc_core::corpus::generate(1000, 16, 101).unwrap();
        let held_out = perc_core::corpus::generate(100, 16, 102).unwrap();
        let config = TrainConfig {
            seed: 1,
            epochs: 6,
            ..TrainConfig::default()
        };
        let (model, _) = train(&train_set, &held_out, Architecture::small(16, 16, 10), &config).unwrap();
        let correct = held_out
            .into_iter()
            .filter(|s| model.predict(&s.image).unwrap() == s.label)
            .collect();
        (model, correct)
    })
}
