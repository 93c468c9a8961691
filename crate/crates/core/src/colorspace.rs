//! sRGB ↔ linear RGB ↔ XYZ (D65, 2° observer) ↔ CIELAB ↔ CIELCH.
//!
//! Each forward map is also available as a [`DifferentiableFn`] over tensors
//! whose last axis holds the three color components.

use crate::diffcore::{check_cotangent, DiffError, DifferentiableFn, Tensor};
use crate::error::{Error, Result};

/// sRGB primaries to XYZ, IEC 61966-2-1.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
];

/// Reference white: the image of linear (1, 1, 1) under [`SRGB_TO_XYZ`].
pub const D65_WHITE: [f64; 3] = [0.9505, 1.0000, 1.0890];

const LAB_EPSILON: f64 = 216.0 / 24389.0; // (6/29)^3
const LAB_SLOPE: f64 = 24389.0 / 3132.0; // 1 / (3 (6/29)^2)
const LAB_OFFSET: f64 = 4.0 / 29.0;
const GAMMA_KNEE: f64 = 0.04045;
const LINEAR_KNEE: f64 = 0.0031308;

/// H×W×3 image with sRGB-encoded components in `[0, 1]`, stored row-major (HWC).
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageTensor({}x{}x3)", self.height, self.width)
    }
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::ImageDimensions {
                height,
                width,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from values that may stray outside `[0, 1]`, clipping them.
    pub fn from_clipped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(height, width, data)
    }

    /// 8-bit encoding, round-to-nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round_ties_even().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) -> Result<()> {
        let i = (row * self.width + col) * 3;
        for (k, v) in rgb.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { index: i + k, value: v });
            }
            self.data[i + k] = v;
        }
        Ok(())
    }

    /// Snaps every component to the 8-bit grid `{0, 1/255, …, 1}` (ties to even).
    pub fn quantize(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| quantize_component(v)).collect(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        self.data.iter().all(|&v| quantize_component(v) == v)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 3], self.data.clone()).expect("valid image shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w, 3] => Self::new(h, w, t.data().to_vec()),
            _ => Err(Error::ImageDimensions {
                height: t.shape().first().copied().unwrap_or(0),
                width: t.shape().get(1).copied().unwrap_or(0),
                len: t.len(),
            }),
        }
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Per-pixel CIELAB of the whole image.
    pub fn to_lab(&self) -> Vec<[f64; 3]> {
        self.data
            .chunks_exact(3)
            .map(|p| srgb_pixel_to_lab([p[0], p[1], p[2]]))
            .collect()
    }
}

#[inline]
pub fn quantize_component(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() / 255.0
}

#[inline]
pub fn srgb_to_linear_scalar(c: f64) -> f64 {
    if c <= GAMMA_KNEE {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn srgb_to_linear_derivative(c: f64) -> f64 {
    if c <= GAMMA_KNEE {
        1.0 / 12.92
    } else {
        2.4 / 1.055 * ((c + 0.055) / 1.055).powf(1.4)
    }
}

#[inline]
pub fn linear_to_srgb_scalar(l: f64) -> f64 {
    if l <= LINEAR_KNEE {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        LAB_SLOPE * t + LAB_OFFSET
    }
}

#[inline]
fn lab_f_derivative(t: f64) -> f64 {
    if t > LAB_EPSILON {
        let c = t.cbrt();
        1.0 / (3.0 * c * c)
    } else {
        LAB_SLOPE
    }
}

#[inline]
fn lab_f_inverse(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > LAB_EPSILON {
        cube
    } else {
        (f - LAB_OFFSET) / LAB_SLOPE
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_t_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

pub fn linear_pixel_to_xyz(rgb: [f64; 3]) -> [f64; 3] {
    mat_vec(&SRGB_TO_XYZ, rgb)
}

pub fn xyz_pixel_to_linear(xyz: [f64; 3]) -> [f64; 3] {
    mat_vec(&invert3(&SRGB_TO_XYZ), xyz)
}

pub fn xyz_pixel_to_lab(xyz: [f64; 3]) -> [f64; 3] {
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_pixel_to_xyz(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    [
        D65_WHITE[0] * lab_f_inverse(fx),
        D65_WHITE[1] * lab_f_inverse(fy),
        D65_WHITE[2] * lab_f_inverse(fz),
    ]
}

pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    xyz_pixel_to_lab(linear_pixel_to_xyz(rgb.map(srgb_to_linear_scalar)))
}

/// Pulls a Lab cotangent `g_lab` back to the sRGB components of `rgb`.
pub(crate) fn srgb_pixel_lab_pullback(rgb: [f64; 3], g_lab: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear_scalar);
    let xyz = linear_pixel_to_xyz(lin);
    let dfx = lab_f_derivative(xyz[0] / D65_WHITE[0]) / D65_WHITE[0];
    let dfy = lab_f_derivative(xyz[1] / D65_WHITE[1]) / D65_WHITE[1];
    let dfz = lab_f_derivative(xyz[2] / D65_WHITE[2]) / D65_WHITE[2];
    let [vl, va, vb] = g_lab;
    let g_xyz = [
        500.0 * va * dfx,
        (116.0 * vl - 500.0 * va + 200.0 * vb) * dfy,
        -200.0 * vb * dfz,
    ];
    let g_lin = mat_t_vec(&SRGB_TO_XYZ, g_xyz);
    [
        g_lin[0] * srgb_to_linear_derivative(rgb[0]),
        g_lin[1] * srgb_to_linear_derivative(rgb[1]),
        g_lin[2] * srgb_to_linear_derivative(rgb[2]),
    ]
}

/// Inverse of [`srgb_pixel_to_lab`]; components are not clipped to the gamut.
pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    xyz_pixel_to_linear(lab_pixel_to_xyz(lab)).map(linear_to_srgb_scalar)
}

/// `(L, C, H)` with `H` in degrees on `[0, 360)`; `H = 0` when `C = 0`.
pub fn lab_pixel_to_lch(lab: [f64; 3]) -> [f64; 3] {
    let [l, a, b] = lab;
    let c = a.hypot(b);
    if c == 0.0 {
        return [l, 0.0, 0.0];
    }
    [l, c, hue_degrees(b, a)]
}

pub fn lch_pixel_to_lab(lch: [f64; 3]) -> [f64; 3] {
    let [l, c, h] = lch;
    let (s, co) = h.to_radians().sin_cos();
    [l, c * co, c * s]
}

/// `atan2(y, x)` in degrees mapped onto `[0, 360)`.
#[inline]
pub fn hue_degrees(y: f64, x: f64) -> f64 {
    let h = y.atan2(x).to_degrees();
    let h = if h < 0.0 { h + 360.0 } else { h };
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

fn check_rgb_last_axis(op: &str, shape: &[usize]) -> Result<(), DiffError> {
    if shape.last() != Some(&3) {
        return Err(DiffError::InputShape {
            op: op.to_string(),
            expected: vec![3],
            found: shape.to_vec(),
        });
    }
    Ok(())
}

/// Elementwise sRGB transfer decoding.
pub struct SrgbToLinear;

impl DifferentiableFn for SrgbToLinear {
    fn name(&self) -> String {
        "srgb_to_linear".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DiffError::Domain {
                op: self.name(),
                detail: format!("component {v} outside [0, 1]"),
            });
        }
        Ok(x.map(srgb_to_linear_scalar))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("srgb_to_linear", x.shape(), cotangent)?;
        let data = x
            .data()
            .iter()
            .zip(cotangent.data())
            .map(|(&c, &v)| v * srgb_to_linear_derivative(c))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Per-pixel 3×3 map to XYZ.
pub struct LinearToXyz;

impl DifferentiableFn for LinearToXyz {
    fn name(&self) -> String {
        "linear_to_xyz".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        check_rgb_last_axis("linear_to_xyz", input)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        check_rgb_last_axis("linear_to_xyz", x.shape())?;
        let data = x
            .data()
            .chunks_exact(3)
            .flat_map(|p| linear_pixel_to_xyz([p[0], p[1], p[2]]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("linear_to_xyz", x.shape(), cotangent)?;
        let data = cotangent
            .data()
            .chunks_exact(3)
            .flat_map(|v| mat_t_vec(&SRGB_TO_XYZ, [v[0], v[1], v[2]]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Per-pixel XYZ to CIELAB relative to [`D65_WHITE`].
pub struct XyzToLab;

impl DifferentiableFn for XyzToLab {
    fn name(&self) -> String {
        "xyz_to_lab".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        check_rgb_last_axis("xyz_to_lab", input)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        check_rgb_last_axis("xyz_to_lab", x.shape())?;
        if let Some(v) = x.data().iter().find(|v| !(**v >= 0.0)) {
            return Err(DiffError::Domain {
                op: self.name(),
                detail: format!("negative or NaN tristimulus value {v}"),
            });
        }
        let data = x
            .data()
            .chunks_exact(3)
            .flat_map(|p| xyz_pixel_to_lab([p[0], p[1], p[2]]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("xyz_to_lab", x.shape(), cotangent)?;
        let mut out = Vec::with_capacity(x.len());
        for (p, v) in x.data().chunks_exact(3).zip(cotangent.data().chunks_exact(3)) {
            let dfx = lab_f_derivative(p[0] / D65_WHITE[0]) / D65_WHITE[0];
            let dfy = lab_f_derivative(p[1] / D65_WHITE[1]) / D65_WHITE[1];
            let dfz = lab_f_derivative(p[2] / D65_WHITE[2]) / D65_WHITE[2];
            // L = 116 fy - 16, a = 500 (fx - fy), b = 200 (fy - fz)
            let (vl, va, vb) = (v[0], v[1], v[2]);
            out.push(500.0 * va * dfx);
            out.push((116.0 * vl - 500.0 * va + 200.0 * vb) * dfy);
            out.push(-200.0 * vb * dfz);
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Per-pixel polar form `(L, C, H°)`.
pub struct LabToLch;

impl DifferentiableFn for LabToLch {
    fn name(&self) -> String {
        "lab_to_lch".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        check_rgb_last_axis("lab_to_lch", input)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        check_rgb_last_axis("lab_to_lch", x.shape())?;
        let data = x
            .data()
            .chunks_exact(3)
            .flat_map(|p| lab_pixel_to_lch([p[0], p[1], p[2]]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("lab_to_lch", x.shape(), cotangent)?;
        let mut out = Vec::with_capacity(x.len());
        for (p, v) in x.data().chunks_exact(3).zip(cotangent.data().chunks_exact(3)) {
            let (a, b) = (p[1], p[2]);
            let c2 = a * a + b * b;
            out.push(v[0]);
            if c2 == 0.0 {
                out.push(0.0);
                out.push(0.0);
                continue;
            }
            let c = c2.sqrt();
            let k = 180.0 / std::f64::consts::PI / c2;
            out.push(v[1] * a / c - v[2] * b * k);
            out.push(v[1] * b / c + v[2] * a * k);
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

pub fn srgb_to_linear(img: &Tensor) -> Result<Tensor> {
    Ok(SrgbToLinear.forward(img)?)
}

pub fn linear_to_xyz(lin: &Tensor) -> Result<Tensor> {
    Ok(LinearToXyz.forward(lin)?)
}

pub fn xyz_to_lab(xyz: &Tensor) -> Result<Tensor> {
    Ok(XyzToLab.forward(xyz)?)
}

pub fn lab_to_lch(lab: &Tensor) -> Result<Tensor> {
    Ok(LabToLch.forward(lab)?)
}
