//! CIEDE2000 color difference, the image-level accumulated difference C2,
//! texture complexity and the texture-weighted C2.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colorspace::{
    lch_pixel_to_lab, srgb_pixel_lab_pullback, srgb_pixel_to_lab, ImageTensor, LinearToXyz, SrgbToLinear, XyzToLab,
};
use crate::diffcore::{
    check_cotangent, check_input, compose, Chain, DiffError, DifferentiableFn, FnRef, Hadamard,
    clamped_sqrt_derivative, L2Norm, Tensor,
};
use crate::dual::{Dual3, Real};
use crate::error::{Error, Result};

/// Parametric weighting factors `k_L`, `k_C`, `k_H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEParams {
    pub k_l: f64,
    pub k_c: f64,
    pub k_h: f64,
}

impl Default for DeltaEParams {
    fn default() -> Self {
        Self {
            k_l: 1.0,
            k_c: 1.0,
            k_h: 1.0,
        }
    }
}

impl DeltaEParams {
    pub fn new(k_l: f64, k_c: f64, k_h: f64) -> Result<Self> {
        for (what, value) in [("k_L", k_l), ("k_C", k_c), ("k_H", k_h)] {
            if !(value > 0.0) {
                return Err(Error::NonPositive { what, value });
            }
        }
        Ok(Self { k_l, k_c, k_h })
    }
}

const POW25_7: f64 = 6_103_515_625.0; // 25^7

/// CIEDE2000 between a fixed first color and a (possibly dual) second color.
fn ciede2000<T: Real>(lab1: [f64; 3], lab2: [T; 3], p: &DeltaEParams) -> T {
    let c = T::cst;
    let [l1, a1, b1] = lab1.map(c);
    let [l2, a2, b2] = lab2;

    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let c_bar7 = ((c1 + c2) * c(0.5)).powi(7);
    let g = c(0.5) * (c(1.0) - (c_bar7 / (c_bar7 + c(POW25_7))).sqrt());

    let a1p = (c(1.0) + g) * a1;
    let a2p = (c(1.0) + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();
    let h1p = T::hue(b1, a1p);
    let h2p = T::hue(b2, a2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;

    let chroma_product = c1p.val() * c2p.val();
    let raw = h2p.val() - h1p.val();
    let dh = if chroma_product == 0.0 {
        c(0.0)
    } else if raw.abs() <= 180.0 {
        h2p - h1p
    } else if raw < 0.0 {
        // h2 <= h1
        h2p - h1p + c(360.0)
    } else {
        h2p - h1p - c(360.0)
    };
    let d_hue = c(2.0) * (c1p * c2p).sqrt() * (dh * c(std::f64::consts::PI / 360.0)).sin();

    let l_bar = (l1 + l2) * c(0.5);
    let cp_bar = (c1p + c2p) * c(0.5);
    let h_sum = h1p + h2p;
    let h_bar = if chroma_product == 0.0 {
        h_sum
    } else if raw.abs() <= 180.0 {
        h_sum * c(0.5)
    } else if h_sum.val() < 360.0 {
        (h_sum + c(360.0)) * c(0.5)
    } else {
        (h_sum - c(360.0)) * c(0.5)
    };

    let deg = c(std::f64::consts::PI / 180.0);
    let t = c(1.0) - c(0.17) * ((h_bar - c(30.0)) * deg).cos()
        + c(0.24) * ((c(2.0) * h_bar) * deg).cos()
        + c(0.32) * ((c(3.0) * h_bar + c(6.0)) * deg).cos()
        - c(0.20) * ((c(4.0) * h_bar - c(63.0)) * deg).cos();
    let z = (h_bar - c(275.0)) * c(1.0 / 25.0);
    let d_theta = c(30.0) * (-(z * z)).exp();
    let cp_bar7 = cp_bar.powi(7);
    let r_c = c(2.0) * (cp_bar7 / (cp_bar7 + c(POW25_7))).sqrt();
    let lm = l_bar - c(50.0);
    let s_l = c(1.0) + c(0.015) * lm * lm / (c(20.0) + lm * lm).sqrt();
    let s_c = c(1.0) + c(0.045) * cp_bar;
    let s_h = c(1.0) + c(0.015) * cp_bar * t;
    let r_t = -(c(2.0) * d_theta * deg).sin() * r_c;

    let tl = dl / (c(p.k_l) * s_l);
    let tc = dc / (c(p.k_c) * s_c);
    let th = d_hue / (c(p.k_h) * s_h);
    let u = tl * tl + tc * tc + th * th + r_t * tc * th;
    // u >= 0 analytically since |R_T| <= 2; guard rounding.
    if u.val() <= 0.0 {
        return c(0.0) * u;
    }
    u.sqrt()
}

/// CIEDE2000 between two CIELAB colors.
pub fn delta_e00_lab(lab1: [f64; 3], lab2: [f64; 3], params: &DeltaEParams) -> f64 {
    if lab1 == lab2 {
        return 0.0;
    }
    ciede2000(lab1, lab2, params)
}

/// CIEDE2000 between two CIELCH colors (hue in degrees).
pub fn delta_e00(p1: [f64; 3], p2: [f64; 3], params: &DeltaEParams) -> f64 {
    if p1 == p2 {
        return 0.0;
    }
    delta_e00_lab(lch_pixel_to_lab(p1), lch_pixel_to_lab(p2), params)
}

/// Value and gradient of CIEDE2000 with respect to the second Lab color.
pub fn delta_e00_lab_grad(lab1: [f64; 3], lab2: [f64; 3], params: &DeltaEParams) -> (f64, [f64; 3]) {
    if lab1 == lab2 {
        return (0.0, [0.0; 3]);
    }
    let d = ciede2000(
        lab1,
        [Dual3::var(lab2[0], 0), Dual3::var(lab2[1], 1), Dual3::var(lab2[2], 2)],
        params,
    );
    (d.v, d.d)
}

/// Per-pixel ΔE00 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DeltaEMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean norm of the map, i.e. C2.
    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ImageDimensions {
                height,
                width,
                len: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }
}

pub fn delta_e00_map(x: &ImageTensor, x2: &ImageTensor, params: &DeltaEParams) -> Result<DeltaEMap> {
    x.same_dims(x2)?;
    let values = x
        .to_lab()
        .into_iter()
        .zip(x2.to_lab())
        .map(|(p, q)| delta_e00_lab(p, q, params))
        .collect();
    Ok(DeltaEMap {
        height: x.height(),
        width: x.width(),
        values,
    })
}

/// `‖ΔE00(x, x2)‖₂` with unit weighting factors.
pub fn c2(x: &ImageTensor, x2: &ImageTensor) -> Result<f64> {
    Ok(delta_e00_map(x, x2, &DeltaEParams::default())?.l2())
}

/// `‖(1 − σ̄) · ΔE00(x, x2)‖₂`, where `σ̄` is the per-pixel channel mean of `sigma`.
pub fn weighted_c2(x: &ImageTensor, x2: &ImageTensor, sigma: &TextureMap) -> Result<f64> {
    x.same_dims(x2)?;
    if sigma.dims() != x.dims() {
        return Err(Error::DimensionMismatch {
            left: x.dims(),
            right: sigma.dims(),
        });
    }
    let map = delta_e00_map(x, x2, &DeltaEParams::default())?;
    Ok(map
        .values
        .iter()
        .zip(sigma.pixel_weights())
        .map(|(d, w)| (w * d) * (w * d))
        .sum::<f64>()
        .sqrt())
}

/// ΔE00 of a Lab image against a fixed reference Lab image: `[h, w, 3] → [h, w]`.
pub struct DeltaE00Map {
    reference: Vec<[f64; 3]>,
    height: usize,
    width: usize,
    params: DeltaEParams,
}

impl DeltaE00Map {
    pub fn new(reference: &ImageTensor, params: DeltaEParams) -> Self {
        Self {
            reference: reference.to_lab(),
            height: reference.height(),
            width: reference.width(),
            params,
        }
    }

    /// Reference given directly in CIELAB, row-major.
    pub fn from_lab(height: usize, width: usize, reference: Vec<[f64; 3]>, params: DeltaEParams) -> Result<Self> {
        if reference.len() != height * width || height == 0 || width == 0 {
            return Err(Error::ImageDimensions {
                height,
                width,
                len: reference.len() * 3,
            });
        }
        Ok(Self {
            reference,
            height,
            width,
            params,
        })
    }
}

impl DifferentiableFn for DeltaE00Map {
    fn name(&self) -> String {
        "delta_e00".into()
    }

    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![self.height, self.width, 3])
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        let expected = [self.height, self.width, 3];
        if input != expected {
            return Err(DiffError::InputShape {
                op: self.name(),
                expected: expected.to_vec(),
                found: input.to_vec(),
            });
        }
        Ok(vec![self.height, self.width])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        check_input("delta_e00", &[self.height, self.width, 3], x)?;
        let data = x
            .data()
            .chunks_exact(3)
            .zip(&self.reference)
            .map(|(q, r)| delta_e00_lab(*r, [q[0], q[1], q[2]], &self.params))
            .collect();
        Tensor::new(vec![self.height, self.width], data)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_input("delta_e00", &[self.height, self.width, 3], x)?;
        check_cotangent("delta_e00", &[self.height, self.width], cotangent)?;
        let mut out = Vec::with_capacity(x.len());
        for ((q, r), &v) in x.data().chunks_exact(3).zip(&self.reference).zip(cotangent.data()) {
            if v == 0.0 {
                out.extend([0.0; 3]);
                continue;
            }
            let (_, g) = delta_e00_lab_grad(*r, [q[0], q[1], q[2]], &self.params);
            out.extend(g.map(|gi| gi * v));
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Differentiable (optionally weighted) C2 relative to a fixed original image.
///
/// Maps an sRGB image tensor `[h, w, 3]` to the scalar `‖w · ΔE00(x, ·)‖₂`.
#[derive(Clone)]
pub struct ColorDistance {
    chain: Chain,
    height: usize,
    width: usize,
    original: Vec<f64>,
    reference: Vec<[f64; 3]>,
    weights: Option<Vec<f64>>,
}

impl ColorDistance {
    pub fn new(original: &ImageTensor) -> Self {
        Self::build(original, None)
    }

    /// Weighted by `1 − σ̄` for the per-pixel channel mean `σ̄` of `sigma`.
    pub fn weighted(original: &ImageTensor, sigma: &TextureMap) -> Result<Self> {
        if sigma.dims() != original.dims() {
            return Err(Error::DimensionMismatch {
                left: original.dims(),
                right: sigma.dims(),
            });
        }
        Ok(Self::build(original, Some(sigma.pixel_weights())))
    }

    /// Weighted by explicit per-pixel factors.
    pub fn with_pixel_weights(original: &ImageTensor, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != original.pixels() {
            return Err(Error::ImageDimensions {
                height: original.height(),
                width: original.width(),
                len: weights.len(),
            });
        }
        Ok(Self::build(original, Some(weights)))
    }

    fn build(original: &ImageTensor, weights: Option<Vec<f64>>) -> Self {
        let (h, w) = original.dims();
        let mut stages: Vec<FnRef> = vec![
            Arc::new(SrgbToLinear),
            Arc::new(LinearToXyz),
            Arc::new(XyzToLab),
            Arc::new(DeltaE00Map::new(original, DeltaEParams::default())),
        ];
        if let Some(weights) = weights.clone() {
            let t = Tensor::new(vec![h, w], weights).expect("weights match image");
            stages.push(Arc::new(Hadamard::new(t)));
        }
        stages.push(Arc::new(L2Norm));
        Self {
            chain: compose(stages).expect("color pipeline shapes are consistent"),
            height: h,
            width: w,
            original: original.data().to_vec(),
            reference: original.to_lab(),
            weights,
        }
    }

    fn check(&self, x2: &ImageTensor) -> Result<()> {
        if x2.dims() != (self.height, self.width) {
            return Err(Error::DimensionMismatch {
                left: (self.height, self.width),
                right: x2.dims(),
            });
        }
        Ok(())
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn value(&self, x2: &ImageTensor) -> Result<f64> {
        self.check(x2)?;
        let params = DeltaEParams::default();
        let mut ss = 0.0;
        for (i, (q, o)) in x2.data().chunks_exact(3).zip(self.original.chunks_exact(3)).enumerate() {
            if q == o {
                continue;
            }
            let d = self.weight(i) * delta_e00_lab(self.reference[i], srgb_pixel_to_lab([q[0], q[1], q[2]]), &params);
            ss += d * d;
        }
        Ok(ss.sqrt())
    }

    /// C2 and its gradient with respect to the sRGB components of `x2`.
    ///
    /// Evaluated per pixel in one pass; agrees with the composed pipeline
    /// (`DifferentiableFn::value_and_grad`) to rounding.
    pub fn value_and_grad(&self, x2: &ImageTensor) -> Result<(f64, Vec<f64>)> {
        self.check(x2)?;
        let params = DeltaEParams::default();
        let mut grad = vec![0.0; x2.data().len()];
        let mut ss = 0.0;
        for (i, (q, o)) in x2.data().chunks_exact(3).zip(self.original.chunks_exact(3)).enumerate() {
            if q == o {
                continue;
            }
            let rgb = [q[0], q[1], q[2]];
            let w = self.weight(i);
            let (d, g_lab) = delta_e00_lab_grad(self.reference[i], srgb_pixel_to_lab(rgb), &params);
            let wd = w * d;
            ss += wd * wd;
            // d‖wΔE‖/dΔE_i = w² ΔE_i / ‖wΔE‖; the norm is applied below
            let g = srgb_pixel_lab_pullback(rgb, g_lab.map(|v| v * w * wd));
            grad[3 * i..3 * i + 3].copy_from_slice(&g);
        }
        let scale = 2.0 * clamped_sqrt_derivative(ss);
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((ss.sqrt(), grad))
    }
}

impl DifferentiableFn for ColorDistance {
    fn name(&self) -> String {
        "color_distance".into()
    }

    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![self.height, self.width, 3])
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        self.chain.output_shape(input)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        self.chain.forward(x)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        self.chain.vjp(x, cotangent)
    }

    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor), DiffError> {
        self.chain.value_and_grad(x)
    }
}

/// Per-channel local texture complexity in `[0, 1]`, H×W×3 row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl TextureMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * 3 {
            return Err(Error::ImageDimensions {
                height,
                width,
                len: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width * 3],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `1 − mean(σ_r, σ_g, σ_b)` per pixel.
    pub fn pixel_weights(&self) -> Vec<f64> {
        self.values
            .chunks_exact(3)
            .map(|s| 1.0 - (s[0] + s[1] + s[2]) / 3.0)
            .collect()
    }
}

/// Fraction of entries kept below the clip threshold in [`texture_complexity`].
pub const TEXTURE_CLIP_QUANTILE: f64 = 0.95;

/// Local 3×3 standard deviation per channel, clipped at the 95th percentile
/// of the whole map and min-max normalized to `[0, 1]`.
///
/// Windows shrink at the borders; the deviation is the population one.
pub fn texture_complexity(x: &ImageTensor) -> Result<TextureMap> {
    let (h, w) = x.dims();
    if h < 3 || w < 3 {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: 3,
        });
    }
    let data = x.data();
    let mut raw = vec![0.0; h * w * 3];
    for row in 0..h {
        let rows = row.saturating_sub(1)..=(row + 1).min(h - 1);
        for col in 0..w {
            let cols = col.saturating_sub(1)..=(col + 1).min(w - 1);
            for ch in 0..3 {
                // shifted by the center value so flat windows give exactly zero
                let shift = data[(row * w + col) * 3 + ch];
                let mut n = 0.0;
                let mut sum = 0.0;
                for r in rows.clone() {
                    for c in cols.clone() {
                        sum += data[(r * w + c) * 3 + ch] - shift;
                        n += 1.0;
                    }
                }
                let mean = sum / n;
                let mut ss = 0.0;
                for r in rows.clone() {
                    for c in cols.clone() {
                        let d = data[(r * w + c) * 3 + ch] - shift - mean;
                        ss += d * d;
                    }
                }
                raw[(row * w + col) * 3 + ch] = (ss / n).sqrt();
            }
        }
    }
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    // nearest-rank percentile
    let rank = ((TEXTURE_CLIP_QUANTILE * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let hi = sorted[rank - 1];
    let lo = sorted[0];
    let span = hi - lo;
    let values = if span > 0.0 {
        raw.iter().map(|&v| ((v.min(hi) - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; raw.len()]
    };
    TextureMap::new(h, w, values)
}
