use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, Dense, LayerCache, LayerSpec, MaxPool, Relu, Shape3};
use super::Logits;
use crate::colorspace::ImageTensor;
use crate::diffcore::{check_cotangent, check_input, DiffError, DifferentiableFn, Tensor};
use crate::error::{Error, Result};

/// Layer list plus input and output dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Feature-map shape entering each layer, plus the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Architecture("empty input".into()));
        }
        if self.classes < 2 {
            return Err(Error::Architecture(format!("{} classes", self.classes)));
        }
        let mut shapes = vec![(3, self.height, self.width)];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(*shapes.last().expect("non-empty"))
                .map_err(|e| Error::Architecture(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        let out = *shapes.last().expect("non-empty");
        if out != (self.classes, 1, 1) {
            return Err(Error::Architecture(format!(
                "final layer produces {out:?}, expected {} logits",
                self.classes
            )));
        }
        Ok(shapes)
    }

    pub fn param_counts(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, &s)| l.param_count(s))
            .collect())
    }

    /// Conv(8, stride 2) → ReLU → Conv(16, stride 2) → ReLU → Dense(32) → ReLU → Dense.
    pub fn small(height: usize, width: usize, classes: usize) -> Self {
        Self {
            name: "small".into(),
            height,
            width,
            classes,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Conv {
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { out: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { out: classes },
            ],
        }
    }

    /// Deeper and wider transfer target: three convolutions with max pooling.
    pub fn wide(height: usize, width: usize, classes: usize) -> Self {
        Self {
            name: "wide".into(),
            height,
            width,
            classes,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 12,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    out_channels: 24,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { out: classes },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv(Conv2d),
    Relu(Relu),
    Pool(MaxPool),
    Dense(Dense),
}

impl Layer {
    fn params(&self) -> &[f64] {
        match self {
            Layer::Conv(c) => &c.params,
            Layer::Dense(d) => &d.params,
            Layer::Relu(_) | Layer::Pool(_) => &[],
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::Conv(c) => &mut c.params,
            Layer::Dense(d) => &mut d.params,
            Layer::Relu(_) | Layer::Pool(_) => &mut [],
        }
    }

    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, LayerCache) {
        match self {
            Layer::Conv(c) => c.forward_cached(x),
            Layer::Relu(r) => r.forward_cached(x),
            Layer::Pool(p) => p.forward_cached(x),
            Layer::Dense(d) => d.forward_cached(x),
        }
    }

    fn backward(&self, cache: &LayerCache, dout: &[f64], grads: Option<&mut [f64]>) -> Vec<f64> {
        match self {
            Layer::Conv(c) => c.backward(cache, dout, grads),
            Layer::Relu(r) => r.backward(cache, dout),
            Layer::Pool(p) => p.backward(cache, dout),
            Layer::Dense(d) => d.backward(cache, dout, grads),
        }
    }
}

/// A classifier: architecture, parameters and the seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    architecture: Architecture,
    layers: Vec<Layer>,
    seed: u64,
}

/// Intermediate state of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    caches: Vec<LayerCache>,
}

impl Model {
    /// Uniform He initialization (`±√(6 / fan_in)`), zero biases.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        let shapes = architecture.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = architecture
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, &shape)| {
                let count = layer.param_count(shape);
                let fan_in = layer.fan_in(shape);
                let outputs = match *layer {
                    LayerSpec::Conv { out_channels, .. } => out_channels,
                    LayerSpec::Dense { out } => out,
                    _ => 0,
                };
                let bound = if fan_in > 0 { (6.0 / fan_in as f64).sqrt() } else { 0.0 };
                (0..count)
                    .map(|i| {
                        if i < count - outputs {
                            rng.gen_range(-bound..bound)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::from_params(architecture, params, seed)
    }

    pub fn from_params(architecture: Architecture, params: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let shapes = architecture.shapes()?;
        if params.len() != architecture.layers.len() {
            return Err(Error::Architecture(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                architecture.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(params.len());
        for (i, ((spec, &input), p)) in architecture.layers.iter().zip(&shapes).zip(params).enumerate() {
            let expected = spec.param_count(input);
            if p.len() != expected {
                return Err(Error::Architecture(format!(
                    "layer {i} has {} parameters, expected {expected}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Architecture(format!("layer {i} has non-finite parameters")));
            }
            layers.push(match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Layer::Conv(Conv2d {
                    input,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    params: p,
                }),
                LayerSpec::Relu => Layer::Relu(Relu),
                LayerSpec::MaxPool { size } => Layer::Pool(MaxPool { input, size }),
                LayerSpec::Dense { out } => Layer::Dense(Dense {
                    inputs: input.0 * input.1 * input.2,
                    outputs: out,
                    params: p,
                }),
            });
        }
        Ok(Self {
            architecture,
            layers,
            seed,
        })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        let counts = architecture.param_counts()?;
        Self::from_params(architecture, counts.into_iter().map(|n| vec![0.0; n]).collect(), 0)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn classes(&self) -> usize {
        self.architecture.classes
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.architecture.height, self.architecture.width)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().map(Layer::params).collect()
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().map(Layer::params_mut)
    }

    pub fn param_total(&self) -> usize {
        self.layers.iter().map(|l| l.params().len()).sum()
    }

    fn check_image(&self, x: &ImageTensor) -> Result<()> {
        let (h, w) = self.input_dims();
        if x.dims() != (h, w) {
            return Err(Error::InputDimensions {
                expected: (h, w, 3),
                found: (x.height(), x.width(), 3),
            });
        }
        Ok(())
    }

    fn run(&self, hwc: &[f64]) -> (Vec<f64>, Vec<LayerCache>) {
        let (h, w) = self.input_dims();
        let hw = h * w;
        let mut chw = vec![0.0; hw * 3];
        for (i, p) in hwc.chunks_exact(3).enumerate() {
            chw[i] = p[0];
            chw[hw + i] = p[1];
            chw[2 * hw + i] = p[2];
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = chw;
        for layer in &self.layers {
            let (next, cache) = layer.forward_cached(&act);
            caches.push(cache);
            act = next;
        }
        (act, caches)
    }

    fn unwind(&self, caches: &[LayerCache], dlogits: &[f64], mut grads: Option<&mut [Vec<f64>]>) -> Vec<f64> {
        let mut g = dlogits.to_vec();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let slot = grads.as_deref_mut().map(|gs| gs[i].as_mut_slice());
            g = layer.backward(cache, &g, slot);
        }
        let (h, w) = self.input_dims();
        let hw = h * w;
        let mut hwc = vec![0.0; hw * 3];
        for i in 0..hw {
            hwc[3 * i] = g[i];
            hwc[3 * i + 1] = g[hw + i];
            hwc[3 * i + 2] = g[2 * hw + i];
        }
        hwc
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<Logits> {
        self.check_image(x)?;
        Ok(Logits(self.run(x.data()).0))
    }

    pub fn predict(&self, x: &ImageTensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    pub fn forward_cached(&self, x: &ImageTensor) -> Result<(Logits, ForwardCache)> {
        self.check_image(x)?;
        let (z, caches) = self.run(x.data());
        Ok((Logits(z), ForwardCache { caches }))
    }

    /// `dlogitsᵀ · ∂Z/∂x` in the image's HWC layout.
    pub fn backward_input(&self, cache: &ForwardCache, dlogits: &[f64]) -> Vec<f64> {
        self.unwind(&cache.caches, dlogits, None)
    }

    /// Accumulates parameter gradients of `dlogitsᵀ · Z` into `grads` (one block per layer).
    pub fn backward_params(&self, cache: &ForwardCache, dlogits: &[f64], grads: &mut [Vec<f64>]) {
        self.unwind(&cache.caches, dlogits, Some(grads));
    }

    /// Logits at `x` plus the input gradient of the scalar whose logit gradient `loss_grad` returns.
    pub fn logits_and_input_grad<F>(&self, x: &ImageTensor, loss_grad: F) -> Result<(Logits, Vec<f64>)>
    where
        F: FnOnce(&Logits) -> Result<Vec<f64>>,
    {
        let (z, cache) = self.forward_cached(x)?;
        let dz = loss_grad(&z)?;
        let g = self.backward_input(&cache, &dz);
        Ok((z, g))
    }
}

impl DifferentiableFn for Model {
    fn name(&self) -> String {
        format!("classifier({})", self.architecture.name)
    }

    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(vec![self.architecture.height, self.architecture.width, 3])
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        let expected = self.input_shape().expect("fixed input");
        if input != expected.as_slice() {
            return Err(DiffError::InputShape {
                op: self.name(),
                expected,
                found: input.to_vec(),
            });
        }
        Ok(vec![self.classes()])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        check_input(&self.name(), &self.input_shape().expect("fixed input"), x)?;
        Tensor::vector(self.run(x.data()).0)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_input(&self.name(), &self.input_shape().expect("fixed input"), x)?;
        check_cotangent(&self.name(), &[self.classes()], cotangent)?;
        let (_, caches) = self.run(x.data());
        Tensor::new(x.shape().to_vec(), self.unwind(&caches, cotangent.data(), None))
    }
}
