//! Layer primitives over single CHW feature maps.

use serde::{Deserialize, Serialize};

use crate::diffcore::{check_cotangent, check_input, DiffError, DifferentiableFn, Tensor};

/// Architecture entry; feature maps are `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    /// Fully connected over the flattened input.
    Dense {
        out: usize,
    },
}

pub type Shape3 = (usize, usize, usize);

impl LayerSpec {
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3, String> {
        let (c, h, w) = input;
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(format!("degenerate conv {self:?}"));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(format!("conv kernel {kernel} larger than padded input {h}x{w}"));
                }
                Ok((
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool { size } => {
                if size == 0 || h < size || w < size {
                    return Err(format!("max pool {size} does not fit {h}x{w}"));
                }
                Ok((c, h / size, w / size))
            }
            LayerSpec::Dense { out } => {
                if out == 0 {
                    return Err("dense layer with zero outputs".into());
                }
                Ok((out, 1, 1))
            }
        }
    }

    /// Number of weights and biases, given the input shape.
    pub fn param_count(&self, input: Shape3) -> usize {
        let (c, h, w) = input;
        match *self {
            LayerSpec::Conv {
                out_channels, kernel, ..
            } => out_channels * c * kernel * kernel + out_channels,
            LayerSpec::Dense { out } => out * c * h * w + out,
            LayerSpec::Relu | LayerSpec::MaxPool { .. } => 0,
        }
    }

    pub fn fan_in(&self, input: Shape3) -> usize {
        let (c, h, w) = input;
        match *self {
            LayerSpec::Conv { kernel, .. } => c * kernel * kernel,
            LayerSpec::Dense { .. } => c * h * w,
            LayerSpec::Relu | LayerSpec::MaxPool { .. } => 0,
        }
    }
}

/// Per-layer state kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { cols: Vec<f64> },
    Relu { input: Vec<f64> },
    MaxPool { argmax: Vec<usize> },
    Dense { input: Vec<f64> },
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and `c` (m×n, row-major).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D convolution with square kernel, zero padding and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub input: Shape3,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]` followed by `[out]` biases.
    pub params: Vec<f64>,
}

impl Conv2d {
    pub fn output(&self) -> Shape3 {
        let (_, h, w) = self.input;
        (
            self.out_channels,
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.input.0 * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (ic, h, w) = self.input;
        let (_, oh, ow) = self.output();
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ohw = oh * ow;
        let mut cols = vec![0.0; self.patch_len() * ohw];
        for c in 0..ic {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..][..w];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64]) -> Vec<f64> {
        let (ic, h, w) = self.input;
        let (_, oh, ow) = self.output();
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ohw = oh * ow;
        let mut dx = vec![0.0; ic * h * w];
        for c in 0..ic {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &dcols[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        let src = &row[oy * ow..][..ow];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, LayerCache) {
        let (oc, oh, ow) = self.output();
        let ohw = oh * ow;
        let r = self.patch_len();
        let cols = self.im2col(x);
        let (weights, bias) = self.params.split_at(oc * r);
        let mut out = vec![0.0; oc * ohw];
        gemm(oc, r, ohw, weights, r as isize, 1, &cols, ohw as isize, 1, 0.0, &mut out);
        for (o, &b) in out.chunks_exact_mut(ohw).zip(bias) {
            o.iter_mut().for_each(|v| *v += b);
        }
        (out, LayerCache::Conv { cols })
    }

    /// Input gradient; accumulates parameter gradients into `grads` when given.
    pub fn backward(&self, cache: &LayerCache, dout: &[f64], grads: Option<&mut [f64]>) -> Vec<f64> {
        let LayerCache::Conv { cols } = cache else {
            unreachable!("conv layer given foreign cache")
        };
        let (oc, oh, ow) = self.output();
        let ohw = oh * ow;
        let r = self.patch_len();
        let weights = &self.params[..oc * r];
        if let Some(g) = grads {
            let (gw, gb) = g.split_at_mut(oc * r);
            gemm(oc, ohw, r, dout, ohw as isize, 1, cols, 1, ohw as isize, 1.0, gw);
            for (b, d) in gb.iter_mut().zip(dout.chunks_exact(ohw)) {
                *b += d.iter().sum::<f64>();
            }
        }
        let mut dcols = vec![0.0; r * ohw];
        gemm(r, oc, ohw, weights, 1, r as isize, dout, ohw as isize, 1, 0.0, &mut dcols);
        self.col2im(&dcols)
    }
}

/// Fully connected layer over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]` followed by `[out]` biases.
    pub params: Vec<f64>,
}

impl Dense {
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, LayerCache) {
        let (weights, bias) = self.params.split_at(self.outputs * self.inputs);
        let mut out = bias.to_vec();
        for (o, row) in out.iter_mut().zip(weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        (out, LayerCache::Dense { input: x.to_vec() })
    }

    pub fn backward(&self, cache: &LayerCache, dout: &[f64], grads: Option<&mut [f64]>) -> Vec<f64> {
        let LayerCache::Dense { input } = cache else {
            unreachable!("dense layer given foreign cache")
        };
        let n = self.inputs;
        let weights = &self.params[..self.outputs * n];
        if let Some(g) = grads {
            let (gw, gb) = g.split_at_mut(self.outputs * n);
            for ((row, b), &d) in gw.chunks_exact_mut(n).zip(gb.iter_mut()).zip(dout) {
                if d != 0.0 {
                    row.iter_mut().zip(input).for_each(|(gi, &xi)| *gi += d * xi);
                }
                *b += d;
            }
        }
        let mut dx = vec![0.0; n];
        for (row, &d) in weights.chunks_exact(n).zip(dout) {
            if d != 0.0 {
                dx.iter_mut().zip(row).for_each(|(gi, &w)| *gi += d * w);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relu;

impl Relu {
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, LayerCache) {
        (
            x.iter().map(|&v| v.max(0.0)).collect(),
            LayerCache::Relu { input: x.to_vec() },
        )
    }

    pub fn backward(&self, cache: &LayerCache, dout: &[f64]) -> Vec<f64> {
        let LayerCache::Relu { input } = cache else {
            unreachable!("relu given foreign cache")
        };
        input
            .iter()
            .zip(dout)
            .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
            .collect()
    }
}

/// Non-overlapping max pooling with window and stride `size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPool {
    pub input: Shape3,
    pub size: usize,
}

impl MaxPool {
    pub fn output(&self) -> Shape3 {
        let (c, h, w) = self.input;
        (c, h / self.size, w / self.size)
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, LayerCache) {
        let (c, h, w) = self.input;
        let (_, oh, ow) = self.output();
        let s = self.size;
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (usize::MAX, f64::NEG_INFINITY);
                    for dy in 0..s {
                        for dx in 0..s {
                            let i = ch * h * w + (oy * s + dy) * w + ox * s + dx;
                            if best.0 == usize::MAX || x[i] > best.1 {
                                best = (i, x[i]);
                            }
                        }
                    }
                    out.push(best.1);
                    argmax.push(best.0);
                }
            }
        }
        (out, LayerCache::MaxPool { argmax })
    }

    pub fn backward(&self, cache: &LayerCache, dout: &[f64]) -> Vec<f64> {
        let LayerCache::MaxPool { argmax } = cache else {
            unreachable!("max pool given foreign cache")
        };
        let (c, h, w) = self.input;
        let mut dx = vec![0.0; c * h * w];
        for (&i, &d) in argmax.iter().zip(dout) {
            dx[i] += d;
        }
        dx
    }
}

fn shape_vec(s: Shape3) -> Vec<usize> {
    vec![s.0, s.1, s.2]
}

macro_rules! layer_fn {
    ($ty:ty, $name:expr, $input:expr, $output:expr, |$self_:ident, $cache:ident, $v:ident| $back:expr) => {
        impl DifferentiableFn for $ty {
            fn name(&self) -> String {
                $name.into()
            }

            fn input_shape(&self) -> Option<Vec<usize>> {
                let $self_ = self;
                Some(shape_vec($input))
            }

            fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
                let $self_ = self;
                let expected = shape_vec($input);
                if input != expected.as_slice() {
                    return Err(DiffError::InputShape {
                        op: $name.into(),
                        expected,
                        found: input.to_vec(),
                    });
                }
                Ok(shape_vec($output))
            }

            fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
                let $self_ = self;
                check_input($name, &shape_vec($input), x)?;
                let (y, _) = self.forward_cached(x.data());
                Tensor::new(shape_vec($output), y)
            }

            fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
                let $self_ = self;
                check_input($name, &shape_vec($input), x)?;
                check_cotangent($name, &shape_vec($output), cotangent)?;
                let (_, $cache) = self.forward_cached(x.data());
                let $v = cotangent.data();
                Tensor::new(shape_vec($input), $back)
            }
        }
    };
}

layer_fn!(Conv2d, "conv2d", s.input, s.output(), |s, cache, v| s.backward(&cache, v, None));
layer_fn!(Dense, "dense", (s.inputs, 1, 1), (s.outputs, 1, 1), |s, cache, v| s.backward(&cache, v, None));
layer_fn!(MaxPool, "max_pool", s.input, s.output(), |s, cache, v| s.backward(&cache, v));

/// Elementwise rectifier over any shape.
impl DifferentiableFn for Relu {
    fn name(&self) -> String {
        "relu".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        Ok(x.map(|v| v.max(0.0)))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("relu", x.shape(), cotangent)?;
        let (_, cache) = self.forward_cached(x.data());
        Tensor::new(x.shape().to_vec(), self.backward(&cache, cotangent.data()))
    }
}
