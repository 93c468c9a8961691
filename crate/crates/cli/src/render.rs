//! Contact sheets and curve plots as plain RGB rasters.

use image::{Rgb, RgbImage};
use perc_core::ImageTensor;

pub const AMPLIFY: f64 = 10.0;
const SCALE: u32 = 4;
const GAP: u32 = 2;

/// `clip(AMPLIFY · (adv − x) + ½)`.
pub fn amplified_delta(x: &ImageTensor, adv: &ImageTensor) -> ImageTensor {
    let data = x
        .data()
        .iter()
        .zip(adv.data())
        .map(|(a, b)| (AMPLIFY * (b - a) + 0.5).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(x.height(), x.width(), data)
        .expect("same shape")
        .quantize()
}

fn blit(canvas: &mut RgbImage, img: &ImageTensor, x0: u32, y0: u32) {
    let bytes = img.to_u8();
    let w = img.width();
    for r in 0..img.height() {
        for c in 0..w {
            let i = 3 * (r * w + c);
            let px = Rgb([bytes[i], bytes[i + 1], bytes[i + 2]]);
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    canvas.put_pixel(x0 + c as u32 * SCALE + dx, y0 + r as u32 * SCALE + dy, px);
                }
            }
        }
    }
}

/// One row per pair: original | adversarial | amplified perturbation.
pub fn contact_sheet(pairs: &[(&ImageTensor, &ImageTensor)]) -> Option<RgbImage> {
    let (first, _) = pairs.first()?;
    let (h, w) = (first.height() as u32 * SCALE, first.width() as u32 * SCALE);
    let width = 3 * w + 4 * GAP;
    let height = pairs.len() as u32 * (h + GAP) + GAP;
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for (i, (x, adv)) in pairs.iter().enumerate() {
        let y0 = GAP + i as u32 * (h + GAP);
        blit(&mut canvas, x, GAP, y0);
        blit(&mut canvas, adv, 2 * GAP + w, y0);
        blit(&mut canvas, &amplified_delta(x, adv), 3 * GAP + 2 * w, y0);
    }
    Some(canvas)
}

pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Percent-valued series over a shared, evenly spaced x grid, drawn on a
/// 0–100 y axis with light gridlines every 20%.
pub fn curve_plot(series: &[&[f64]]) -> RgbImage {
    let (w, h, m) = (320u32, 200u32, 20i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (x_max, y_max) = (w as i64 - m, h as i64 - m);
    for k in 0..=5 {
        let y = y_max - (y_max - m) * k / 5;
        line(&mut img, (m, y), (x_max, y), Rgb([225, 225, 225]));
    }
    line(&mut img, (m, m), (m, y_max), Rgb([0, 0, 0]));
    line(&mut img, (m, y_max), (x_max, y_max), Rgb([0, 0, 0]));
    for (s, values) in series.iter().enumerate() {
        let color = Rgb(PALETTE[s % PALETTE.len()]);
        let n = values.len();
        let pt = |i: usize| {
            let x = if n > 1 { m + (x_max - m) * i as i64 / (n as i64 - 1) } else { (m + x_max) / 2 };
            let y = y_max - ((y_max - m) as f64 * values[i].clamp(0.0, 100.0) / 100.0).round() as i64;
            (x, y)
        };
        for i in 0..n {
            let (x, y) = pt(i);
            for d in -2..=2 {
                line(&mut img, (x - 2, y + d), (x + 2, y + d), color);
            }
            if i + 1 < n {
                line(&mut img, pt(i), pt(i + 1), color);
            }
        }
    }
    img
}
