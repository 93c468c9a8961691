mod support;

use std::time::Instant;

use perc_core::colorspace::{lab_pixel_to_lch, srgb_pixel_to_lab};
use perc_core::perceptual::{
    c2, delta_e00, delta_e00_lab, delta_e00_map, texture_complexity, weighted_c2, DeltaEParams, TextureMap,
};
use perc_core::ImageTensor;
use proptest::prelude::*;
use rand::Rng;
use support::ciede2000::{self, SHARMA_PAIRS};

fn random_lab(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen_range(0.0..100.0), rng.gen_range(-128.0..128.0), rng.gen_range(-128.0..128.0)]
}

#[test]
fn reference_reproduces_published_pairs() {
    for (i, (a, b, want)) in SHARMA_PAIRS.iter().enumerate() {
        let got = ciede2000::delta_e00(*a, *b);
        assert!((got - want).abs() < 5e-5, "pair {}: {got} vs {want}", i + 1);
        let back = ciede2000::delta_e00(*b, *a);
        assert!((back - want).abs() < 5e-5, "pair {} reversed", i + 1);
    }
}

#[test]
fn library_reproduces_published_pairs() {
    let p = DeltaEParams::default();
    for (i, (a, b, want)) in SHARMA_PAIRS.iter().enumerate() {
        let got = delta_e00_lab(*a, *b, &p);
        assert!((got - want).abs() < 1e-4, "pair {}: {got} vs {want}", i + 1);
    }
}

#[test]
fn agrees_with_reference_on_random_pairs() {
    let start = Instant::now();
    let mut rng = support::rng(7);
    let p = DeltaEParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = random_lab(&mut rng);
        let b = random_lab(&mut rng);
        worst = worst.max((delta_e00_lab(a, b, &p) - ciede2000::delta_e00(a, b)).abs());
    }
    assert!(worst < 1e-4, "worst disagreement {worst}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn agrees_with_reference_on_near_colors() {
    // small differences are where attacks live
    let mut rng = support::rng(8);
    let p = DeltaEParams::default();
    for _ in 0..2_000 {
        let a = random_lab(&mut rng);
        let b = [
            a[0] + rng.gen_range(-1.0..1.0),
            a[1] + rng.gen_range(-1.0..1.0),
            a[2] + rng.gen_range(-1.0..1.0),
        ];
        let d = (delta_e00_lab(a, b, &p) - ciede2000::delta_e00(a, b)).abs();
        assert!(d < 1e-4, "{a:?} {b:?}: {d}");
    }
}

#[test]
fn lch_entry_point_matches_lab() {
    let mut rng = support::rng(9);
    let p = DeltaEParams::default();
    for _ in 0..1_000 {
        let a = random_lab(&mut rng);
        let b = random_lab(&mut rng);
        let via_lch = delta_e00(lab_pixel_to_lch(a), lab_pixel_to_lch(b), &p);
        assert!((via_lch - delta_e00_lab(a, b, &p)).abs() < 1e-9);
    }
}

#[test]
fn symmetric_nonnegative_and_zero_only_on_identity() {
    let mut rng = support::rng(10);
    let p = DeltaEParams::default();
    for _ in 0..10_000 {
        let a = random_lab(&mut rng);
        let b = random_lab(&mut rng);
        let d = delta_e00_lab(a, b, &p);
        assert_eq!(d, delta_e00_lab(b, a, &p));
        assert!(d > 0.0);
        assert_eq!(delta_e00_lab(a, a, &p), 0.0);
    }
}

#[test]
fn map_matches_scalar_oracle() {
    let mut rng = support::rng(11);
    let x = support::random_image(&mut rng, 8, 8);
    let y = support::perturbed(&mut rng, &x, 0.1);
    let map = delta_e00_map(&x, &y, &DeltaEParams::default()).unwrap();
    for (i, (p, q)) in x.data().chunks(3).zip(y.data().chunks(3)).enumerate() {
        let want = ciede2000::delta_e00(
            srgb_pixel_to_lab([p[0], p[1], p[2]]),
            srgb_pixel_to_lab([q[0], q[1], q[2]]),
        );
        assert!((map.values()[i] - want).abs() < 1e-4);
    }
}

#[test]
fn c2_zero_exactly_on_equal_quantized_images() {
    let mut rng = support::rng(12);
    let x = support::random_image(&mut rng, 6, 6).quantize();
    assert_eq!(c2(&x, &x).unwrap(), 0.0);
    let mut y = x.clone();
    let px = y.pixel(3, 4);
    y.set_pixel(3, 4, [px[0] + 1.0 / 255.0, px[1], px[2]]).unwrap();
    assert!(c2(&x, &y).unwrap() > 0.0);
}

fn brute_force_weighted(x: &ImageTensor, y: &ImageTensor, sigma: &TextureMap) -> f64 {
    let mut ss = 0.0;
    for i in 0..x.pixels() {
        let p = &x.data()[3 * i..3 * i + 3];
        let q = &y.data()[3 * i..3 * i + 3];
        let s = &sigma.values()[3 * i..3 * i + 3];
        let d = ciede2000::delta_e00(
            srgb_pixel_to_lab([p[0], p[1], p[2]]),
            srgb_pixel_to_lab([q[0], q[1], q[2]]),
        );
        let w = 1.0 - (s[0] + s[1] + s[2]) / 3.0;
        ss += (w * d) * (w * d);
    }
    ss.sqrt()
}

#[test]
fn weighted_c2_matches_brute_force() {
    let mut rng = support::rng(13);
    for _ in 0..20 {
        let x = support::random_image(&mut rng, 7, 5);
        let y = support::perturbed(&mut rng, &x, 0.05);
        let sigma = TextureMap::new(7, 5, (0..105).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let got = weighted_c2(&x, &y, &sigma).unwrap();
        let want = brute_force_weighted(&x, &y, &sigma);
        assert!((got - want).abs() < 1e-4 * want.max(1.0));
    }
}

#[test]
fn weighted_c2_endpoints() {
    let mut rng = support::rng(14);
    let x = support::random_image(&mut rng, 4, 4);
    let y = support::perturbed(&mut rng, &x, 0.05);
    assert_eq!(weighted_c2(&x, &y, &TextureMap::zeros(4, 4)).unwrap(), c2(&x, &y).unwrap());
    let ones = TextureMap::new(4, 4, vec![1.0; 48]).unwrap();
    assert_eq!(weighted_c2(&x, &y, &ones).unwrap(), 0.0);
}

/// Population standard deviation over the 3×3 window clipped to the image.
fn window_std(x: &ImageTensor, row: usize, col: usize, ch: usize) -> f64 {
    let mut vals = Vec::new();
    for r in row.saturating_sub(1)..=(row + 1).min(x.height() - 1) {
        for c in col.saturating_sub(1)..=(col + 1).min(x.width() - 1) {
            vals.push(x.pixel(r, c)[ch]);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn texture_of_checkerboard_matches_window_oracle() {
    let (h, w) = (8, 8);
    let mut x = ImageTensor::filled(h, w, [0.0; 3]).unwrap();
    for r in 0..h {
        for c in 0..w {
            let v = ((r + c) % 2) as f64;
            x.set_pixel(r, c, [v, 0.0, 0.0]).unwrap();
        }
    }
    let t = texture_complexity(&x).unwrap();
    // raw interior deviation of a 0/1 checkerboard window is sqrt(20)/9
    let interior = 20f64.sqrt() / 9.0;
    assert!((window_std(&x, 3, 3, 0) - interior).abs() < 1e-12);

    let mut raw: Vec<f64> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                raw.push(window_std(&x, r, c, ch));
            }
        }
    }
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let hi = sorted[(0.95 * sorted.len() as f64).ceil() as usize - 1];
    let lo = sorted[0];
    for (i, v) in raw.iter().enumerate() {
        let want = (v.min(hi) - lo) / (hi - lo);
        assert!((t.values()[i] - want).abs() < 1e-12, "entry {i}");
    }
    // green and blue channels are constant
    assert!(t.values().iter().skip(1).step_by(3).all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn texture_in_unit_interval(data in prop::collection::vec(0.0f64..=1.0, 5 * 6 * 3)) {
        let x = ImageTensor::new(5, 6, data).unwrap();
        let t = texture_complexity(&x).unwrap();
        prop_assert!(t.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn weighting_never_increases_c2(
        data in prop::collection::vec(0.0f64..=1.0, 4 * 4 * 3),
        noise in prop::collection::vec(-0.1f64..0.1, 4 * 4 * 3),
        sigma in prop::collection::vec(0.0f64..=1.0, 4 * 4 * 3),
    ) {
        let x = ImageTensor::new(4, 4, data.clone()).unwrap();
        let y = ImageTensor::from_clipped(4, 4, data.iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        let s = TextureMap::new(4, 4, sigma).unwrap();
        prop_assert!(weighted_c2(&x, &y, &s).unwrap() <= c2(&x, &y).unwrap());
    }
}
