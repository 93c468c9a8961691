//! Finite-difference checks of every differentiable primitive and of the
//! attack losses with respect to the input image.

mod support;

use std::sync::Arc;
use std::time::Instant;

use perc_core::classifier::{cross_entropy, cross_entropy_grad, margin_loss, margin_loss_grad, Logits, Model};
use perc_core::colorspace::{LabToLch, LinearToXyz, SrgbToLinear, XyzToLab};
use perc_core::diffcore::{
    compose, DifferentiableFn, FnRef, Hadamard, Identity, L2Norm, Scale, Square, SumAll, Tensor, WeightedSum,
};
use perc_core::perceptual::{texture_complexity, ColorDistance, DeltaE00Map, DeltaEParams, TextureMap};
use perc_core::ImageTensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const POINTS: usize = 100;

/// Outcome of comparing an analytic derivative with central differences at
/// one coordinate; coordinates whose one-sided differences disagree sit on a
/// branch point and are skipped.
enum Check {
    Pass,
    Skip,
    Fail(f64, f64),
}

fn check_coordinate(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, analytic: f64, tol: f64) -> Check {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += STEP;
    m[i] -= STEP;
    let (fp, f0, fm) = (f(&p), f(x), f(&m));
    let fwd = (fp - f0) / STEP;
    let bwd = (f0 - fm) / STEP;
    let central = (fp - fm) / (2.0 * STEP);
    let scale = fwd.abs().max(bwd.abs()).max(1e-3);
    if (fwd - bwd).abs() > 1e-2 * scale {
        return Check::Skip;
    }
    if support::rel_close(analytic, central, tol, 1e-6) {
        Check::Pass
    } else {
        Check::Fail(analytic, central)
    }
}

/// Checks `coords` coordinates of a scalar function's gradient at one point.
/// Returns (checked, skipped).
fn check_gradient(
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    g: &[f64],
    coords: usize,
    tol: f64,
    label: &str,
) -> (usize, usize) {
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..coords {
        let i = rng.gen_range(0..x.len());
        match check_coordinate(f, x, i, g[i], tol) {
            Check::Pass => checked += 1,
            Check::Skip => skipped += 1,
            Check::Fail(a, c) => panic!("{label}: coordinate {i}: analytic {a} vs central {c}"),
        }
    }
    (checked, skipped)
}

/// vjp against central differences of `vᵀ f(x)` for a random cotangent `v`.
fn check_primitive(rng: &mut ChaCha8Rng, f: &dyn DifferentiableFn, x: &Tensor, tol: f64) -> (usize, usize) {
    let y = f.forward(x).unwrap();
    let v: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cot = Tensor::new(y.shape().to_vec(), v.clone()).unwrap();
    let g = f.vjp(x, &cot).unwrap();
    let shape = x.shape().to_vec();
    let scalar = |d: &[f64]| {
        let t = Tensor::new(shape.clone(), d.to_vec()).unwrap();
        f.forward(&t).unwrap().data().iter().zip(&v).map(|(a, b)| a * b).sum()
    };
    check_gradient(rng, &scalar, x.data(), g.data(), x.len(), tol, &f.name())
}

fn image_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![h, w, 3], (0..h * w * 3).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn run_primitive(seed: u64, f: &dyn DifferentiableFn, mut sample: impl FnMut(&mut ChaCha8Rng) -> Tensor) {
    let mut rng = support::rng(seed);
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..POINTS {
        let x = sample(&mut rng);
        let (c, s) = check_primitive(&mut rng, f, &x, 1e-4);
        checked += c;
        skipped += s;
    }
    assert!(skipped * 20 <= checked + skipped, "{}: {skipped} skipped of {}", f.name(), checked + skipped);
}

#[test]
fn srgb_to_linear_vjp() {
    // both sides of the gamma knee, away from it
    run_primitive(1, &SrgbToLinear, |r| {
        let t = image_tensor(r, 2, 2, 0.0, 1.0);
        t.map(|v| if (v - 0.04045).abs() < 1e-3 { v + 0.01 } else { v }.clamp(0.001, 0.999))
    });
}

#[test]
fn linear_to_xyz_vjp() {
    run_primitive(2, &LinearToXyz, |r| image_tensor(r, 2, 2, 0.0, 1.0));
}

#[test]
fn xyz_to_lab_vjp() {
    run_primitive(3, &XyzToLab, |r| image_tensor(r, 2, 2, 0.001, 1.0));
}

#[test]
fn lab_to_lch_vjp() {
    run_primitive(4, &LabToLch, |r| {
        Tensor::new(
            vec![2, 2, 3],
            (0..12)
                .map(|i| if i % 3 == 0 { r.gen_range(0.0..100.0) } else { r.gen_range(5.0..60.0) * if r.gen() { 1.0 } else { -1.0 } })
                .collect(),
        )
        .unwrap()
    });
}

#[test]
fn delta_e00_map_vjp() {
    let mut rng = support::rng(5);
    let reference = support::random_image(&mut rng, 3, 3);
    let f = DeltaE00Map::new(&reference, DeltaEParams::default());
    let lab: Vec<f64> = reference.to_lab().into_iter().flatten().collect();
    run_primitive(6, &f, |r| {
        Tensor::new(vec![3, 3, 3], lab.iter().map(|v| v + r.gen_range(-5.0..5.0)).collect()).unwrap()
    });
}

#[test]
fn elementary_primitives_vjp() {
    let weights = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f64 - 5.5).collect()).unwrap();
    let fns: Vec<FnRef> = vec![
        Arc::new(Identity),
        Arc::new(Scale(-2.5)),
        Arc::new(Square),
        Arc::new(SumAll),
        Arc::new(L2Norm),
        Arc::new(Hadamard::new(weights)),
    ];
    for (k, f) in fns.iter().enumerate() {
        run_primitive(10 + k as u64, f.as_ref(), |r| image_tensor(r, 2, 2, -2.0, 2.0));
    }
}

#[test]
fn composed_pipeline_vjp() {
    let chain = compose(vec![
        Arc::new(SrgbToLinear) as FnRef,
        Arc::new(LinearToXyz),
        Arc::new(XyzToLab),
        Arc::new(LabToLch),
    ])
    .unwrap();
    run_primitive(20, &chain, |r| image_tensor(r, 2, 2, 0.05, 0.95));
    let sum = WeightedSum::new(vec![(0.5, Arc::new(SumAll) as FnRef), (2.0, Arc::new(L2Norm))]);
    run_primitive(21, &sum, |r| image_tensor(r, 2, 2, -1.0, 1.0));
}

fn data_image(h: usize, w: usize, d: &[f64]) -> ImageTensor {
    ImageTensor::from_clipped(h, w, d.to_vec()).unwrap()
}

/// Shared driver for the image-input losses: 100 random points, a handful of
/// coordinates each plus one full directional derivative.
fn run_image_loss(
    seed: u64,
    label: &str,
    mut setup: impl FnMut(&mut ChaCha8Rng) -> (ImageTensor, Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>),
) {
    let mut rng = support::rng(seed);
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..POINTS {
        let (x, f) = setup(&mut rng);
        let (_, g) = f(x.data());
        let value = |d: &[f64]| f(d).0;
        let (c, s) = check_gradient(&mut rng, &value, x.data(), &g, 8, 1e-3, label);
        checked += c;
        skipped += s;
        // directional derivative along a random unit direction
        let dir: Vec<f64> = (0..x.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let along = |t: f64| -> Vec<f64> { x.data().iter().zip(&dir).map(|(a, d)| a + t * d / norm).collect() };
        let (fp, fm) = (value(&along(STEP)), value(&along(-STEP)));
        let (f0, fp2) = (value(x.data()), value(&along(2.0 * STEP)));
        let central = (fp - fm) / (2.0 * STEP);
        if ((fp2 - fp) - (fp - f0)).abs() < 1e-2 * (fp - f0).abs().max(1e-3 * STEP) {
            let analytic: f64 = g.iter().zip(&dir).map(|(a, d)| a * d / norm).sum();
            assert!(support::rel_close(analytic, central, 1e-3, 1e-6), "{label}: directional {analytic} vs {central}");
        }
    }
    assert!(checked >= 90 * 8, "{label}: only {checked} coordinates checked ({skipped} skipped)");
}

#[test]
fn c2_gradient() {
    let start = Instant::now();
    run_image_loss(30, "c2", |r| {
        let x = support::random_image(r, 8, 8);
        let x2 = support::perturbed(r, &x, 0.05);
        let dist = ColorDistance::new(&x);
        let f = move |d: &[f64]| dist.value_and_grad(&data_image(8, 8, d)).unwrap();
        (x2, Box::new(f))
    });
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn weighted_c2_gradient() {
    run_image_loss(31, "weighted_c2", |r| {
        let x = support::random_image(r, 8, 8);
        let x2 = support::perturbed(r, &x, 0.05);
        let sigma = texture_complexity(&x).unwrap();
        let dist = ColorDistance::weighted(&x, &sigma).unwrap();
        let f = move |d: &[f64]| dist.value_and_grad(&data_image(8, 8, d)).unwrap();
        (x2, Box::new(f))
    });
}

fn model_loss(
    model: Arc<Model>,
    value: impl Fn(&Logits) -> f64 + Send + Sync + 'static,
    grad: impl Fn(&Logits) -> Vec<f64> + Send + Sync + 'static,
) -> Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)> {
    let (h, w) = model.input_dims();
    Box::new(move |d: &[f64]| {
        let x = data_image(h, w, d);
        let (z, g) = model.logits_and_input_grad(&x, |z| Ok(grad(z))).unwrap();
        (value(&z), g)
    })
}

#[test]
fn cross_entropy_input_gradient() {
    let start = Instant::now();
    let model = Arc::new(support::small_model(16, 3));
    run_image_loss(32, "cross_entropy", |r| {
        let x = support::random_image(r, 16, 16);
        let y = r.gen_range(0..10);
        let f = model_loss(
            model.clone(),
            move |z| cross_entropy(z, y).unwrap(),
            move |z| cross_entropy_grad(z, y).unwrap(),
        );
        (x, f)
    });
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn margin_loss_input_gradient() {
    let model = Arc::new(support::small_model(16, 4));
    run_image_loss(33, "margin_loss", |r| {
        let x = support::random_image(r, 16, 16);
        let y = r.gen_range(0..10);
        let targeted = r.gen();
        // κ large enough that the clamp is inactive
        let kappa = 1e3;
        let f = model_loss(
            model.clone(),
            move |z| margin_loss(z, y, kappa, targeted).unwrap(),
            move |z| margin_loss_grad(z, y, kappa, targeted).unwrap(),
        );
        (x, f)
    });
}

#[test]
fn model_vjp_matches_finite_differences() {
    let model = support::small_model(8, 5);
    run_primitive(34, &model, |r| image_tensor(r, 8, 8, 0.05, 0.95));
}

#[test]
fn clamped_c2_gradient_is_finite_at_zero() {
    let mut rng = support::rng(35);
    let x = support::random_image(&mut rng, 4, 4);
    let (v, g) = ColorDistance::new(&x).value_and_grad(&x).unwrap();
    assert_eq!(v, 0.0);
    assert!(g.iter().all(|v| v.is_finite()));
    let zero = TextureMap::zeros(4, 4);
    let (_, g) = ColorDistance::weighted(&x, &zero).unwrap().value_and_grad(&x).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn c2_gradient_vanishes_only_at_the_original() {
    let mut rng = support::rng(36);
    for _ in 0..20 {
        let x = support::random_image(&mut rng, 4, 4);
        let x2 = support::perturbed(&mut rng, &x, 0.02);
        let (_, g) = ColorDistance::new(&x).value_and_grad(&x2).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
