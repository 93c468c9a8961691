//! Procedural desk-scale image corpus: ten shape/pattern classes rendered
//! in random colors over tinted gradient backgrounds with sensor-like noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::LabeledImage;
use crate::colorspace::ImageTensor;
use crate::error::Result;

pub const CLASS_NAMES: [&str; 10] = [
    "disk",
    "square",
    "triangle",
    "ring",
    "plus",
    "horizontal_bars",
    "vertical_bars",
    "diagonal_bars",
    "checker",
    "cross",
];

pub const CLASS_COUNT: usize = CLASS_NAMES.len();

const SUPERSAMPLE: usize = 3;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct Pattern {
    class: usize,
    cx: f64,
    cy: f64,
    scale: f64,
    angle: f64,
    freq: f64,
    phase: f64,
}

impl Pattern {
    /// Whether the point `(x, y)` in `[-1, 1]²` is foreground.
    fn inside(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.scale;
        let v = (-s * dx + c * dy) / self.scale;
        let r = u.hypot(v);
        match self.class {
            0 => r < 1.0,
            1 => u.abs().max(v.abs()) < 0.85,
            2 => {
                // apex up, base down
                v < 0.75 && v > -1.0 && u.abs() < (v + 1.0) * 0.6
            }
            3 => r < 1.0 && r > 0.55,
            4 => (u.abs() < 0.3 && v.abs() < 1.0) || (v.abs() < 0.3 && u.abs() < 1.0),
            5 => (y * self.freq + self.phase).sin() > 0.0,
            6 => (x * self.freq + self.phase).sin() > 0.0,
            7 => ((x + y) * self.freq * std::f64::consts::FRAC_1_SQRT_2 + self.phase).sin() > 0.0,
            8 => ((x * self.freq + self.phase).sin() * (y * self.freq + self.phase).sin()) > 0.0,
            _ => u.abs() < 1.0 && v.abs() < 1.0 && ((u - v).abs() < 0.4 || (u + v).abs() < 0.4),
        }
    }
}

fn color_gap(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Renders one quantized image of `class`; deterministic in `seed`.
pub fn render(class: usize, size: usize, seed: u64) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape_class = class % CLASS_COUNT;
    let fg = hsv_to_rgb(rng.gen(), rng.gen_range(0.55..1.0), rng.gen_range(0.45..1.0));
    let mut bg_a;
    loop {
        bg_a = hsv_to_rgb(rng.gen(), rng.gen_range(0.0..0.6), rng.gen_range(0.1..0.95));
        if color_gap(fg, bg_a) > 0.45 {
            break;
        }
    }
    let tint = [rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)];
    let gradient_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gs, gc) = gradient_angle.sin_cos();
    let shape_like = shape_class <= 4 || shape_class == 9;
    let pattern = Pattern {
        class: shape_class,
        cx: if shape_like { rng.gen_range(-0.2..0.2) } else { 0.0 },
        cy: if shape_like { rng.gen_range(-0.2..0.2) } else { 0.0 },
        scale: rng.gen_range(0.5..0.8),
        angle: if shape_like { rng.gen_range(-0.35..0.35) } else { 0.0 },
        freq: rng.gen_range(2.6..3.6) * std::f64::consts::PI,
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
    };
    let noise = rng.gen_range(0.01..0.04);

    let mut data = Vec::with_capacity(size * size * 3);
    let n = SUPERSAMPLE as f64;
    for row in 0..size {
        for col in 0..size {
            let mut cover = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = 2.0 * (col as f64 + (sx as f64 + 0.5) / n) / size as f64 - 1.0;
                    let y = 2.0 * (row as f64 + (sy as f64 + 0.5) / n) / size as f64 - 1.0;
                    if pattern.inside(x, y) {
                        cover += 1.0;
                    }
                }
            }
            let cover = cover / (n * n);
            let x = 2.0 * (col as f64 + 0.5) / size as f64 - 1.0;
            let y = 2.0 * (row as f64 + 0.5) / size as f64 - 1.0;
            let g = 0.5 * (gc * x + gs * y);
            for ch in 0..3 {
                let bg = bg_a[ch] + tint[ch] * g;
                let v = cover * fg[ch] + (1.0 - cover) * bg + noise * gaussian(&mut rng);
                data.push(v);
            }
        }
    }
    Ok(ImageTensor::from_clipped(size, size, data)?.quantize())
}

/// `count` images with labels cycling through the classes, seeded per image.
pub fn generate(count: usize, size: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    (0..count)
        .map(|i| {
            let label = i % CLASS_COUNT;
            let image_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            Ok(LabeledImage {
                image: render(label, size, image_seed)?,
                label,
            })
        })
        .collect()
}

/// Deterministic target label different from `label`.
pub fn target_for(label: usize, classes: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (label + rng.gen_range(1..classes)) % classes
}

/// Image whose left half is one flat saturated color and right half dense texture.
pub fn half_flat_half_textured(size: usize, seed: u64) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = hsv_to_rgb(rng.gen(), 0.8, 0.85);
    let mut data = Vec::with_capacity(size * size * 3);
    for _row in 0..size {
        for col in 0..size {
            if col < size / 2 {
                data.extend(flat);
            } else {
                for _ in 0..3 {
                    data.push(rng.gen_range(0.1..0.9));
                }
            }
        }
    }
    Ok(ImageTensor::new(size, size, data)?.quantize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_quantized() {
        let a = render(3, 16, 42).unwrap();
        let b = render(3, 16, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_quantized());
        assert_ne!(a, render(3, 16, 43).unwrap());
    }

    #[test]
    fn labels_cycle() {
        let set = generate(25, 8, 1).unwrap();
        assert_eq!(set[0].label, 0);
        assert_eq!(set[13].label, 3);
    }

    #[test]
    fn targets_differ_from_labels() {
        for label in 0..CLASS_COUNT {
            for seed in 0..20 {
                let t = target_for(label, CLASS_COUNT, seed);
                assert_ne!(t, label);
                assert!(t < CLASS_COUNT);
            }
        }
    }

    #[test]
    fn probe_has_flat_left_half() {
        let img = half_flat_half_textured(16, 3).unwrap();
        let p = img.pixel(0, 0);
        for row in 0..16 {
            for col in 0..8 {
                assert_eq!(img.pixel(row, col), p);
            }
        }
    }
}
