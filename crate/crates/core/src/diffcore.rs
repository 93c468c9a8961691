//! Minimal reverse-mode differentiation substrate.
//!
//! Every numerical stage of the color pipeline and the classifier implements
//! [`DifferentiableFn`]: a forward map plus its vector-Jacobian product.
//! Stages are chained with [`compose`], and [`grad`] / [`value_and_grad`]
//! drive a scalar loss back to its input.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Floor used by [`clamped_sqrt_derivative`] so that `d sqrt(u)/du` stays finite at `u = 0`.
pub const SQRT_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDimension(Vec<usize>),
    #[error("composition boundary {boundary} ({left} -> {right}): {left} produces {produced:?} but {right} expects {expected:?}")]
    Composition {
        boundary: usize,
        left: String,
        right: String,
        produced: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("cannot compose an empty list of functions")]
    EmptyComposition,
    #[error("{op}: expected input shape {expected:?}, got {found:?}")]
    InputShape {
        op: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{op}: cotangent shape {found:?} does not match output shape {expected:?}")]
    CotangentShape {
        op: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("{op}: non-finite value produced")]
    NonFinite { op: String },
    #[error("{op}: input outside domain ({detail})")]
    Domain { op: String, detail: String },
}

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(DiffError::ZeroDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, DiffError> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, DiffError> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, DiffError> {
        Self::new(shape, self.data)
    }

    /// Same-shape tensor built from `f` applied elementwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

/// A map with a forward evaluation and a vector-Jacobian product.
///
/// `vjp(x, v)` must equal `vᵀ J(x)` where `J` is the Jacobian of `forward` at `x`.
pub trait DifferentiableFn: Send + Sync {
    fn name(&self) -> String;

    /// Fixed input shape, if the function only accepts one.
    fn input_shape(&self) -> Option<Vec<usize>> {
        None
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError>;

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError>;

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError>;

    /// Forward value and gradient of a scalar-output function.
    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor), DiffError> {
        let y = self.forward(x)?;
        let value = y
            .as_scalar()
            .ok_or_else(|| DiffError::NonScalarOutput(y.shape().to_vec()))?;
        let g = self.vjp(x, &Tensor::scalar(1.0))?;
        Ok((value, g))
    }
}

pub type FnRef = Arc<dyn DifferentiableFn>;

/// Checks that `x` matches `expected`, producing the standard shape error otherwise.
pub fn check_input(op: &str, expected: &[usize], x: &Tensor) -> Result<(), DiffError> {
    if x.shape() != expected {
        return Err(DiffError::InputShape {
            op: op.to_string(),
            expected: expected.to_vec(),
            found: x.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn check_cotangent(op: &str, expected: &[usize], v: &Tensor) -> Result<(), DiffError> {
    if v.shape() != expected {
        return Err(DiffError::CotangentShape {
            op: op.to_string(),
            expected: expected.to_vec(),
            found: v.shape().to_vec(),
        });
    }
    Ok(())
}

/// `d sqrt(u) / du` evaluated at `max(u, SQRT_CLAMP)`.
#[inline]
pub fn clamped_sqrt_derivative(u: f64) -> f64 {
    0.5 / u.max(SQRT_CLAMP).sqrt()
}

/// Left-to-right composition of differentiable stages.
#[derive(Clone)]
pub struct Chain {
    stages: Vec<FnRef>,
}

impl std::fmt::Debug for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.stages.iter().map(|s| s.name())).finish()
    }
}

/// Composes `fns` left to right: `forward = fₙ ∘ … ∘ f₁`.
///
/// Adjacent stages are checked wherever shapes are statically known.
pub fn compose(fns: Vec<FnRef>) -> Result<Chain, DiffError> {
    if fns.is_empty() {
        return Err(DiffError::EmptyComposition);
    }
    let mut known: Option<Vec<usize>> = None;
    for (i, f) in fns.iter().enumerate() {
        let fixed = f.input_shape();
        let input = match (known.take(), fixed) {
            (Some(produced), Some(expected)) => {
                if produced != expected {
                    return Err(DiffError::Composition {
                        boundary: i,
                        left: fns[i - 1].name(),
                        right: f.name(),
                        produced,
                        expected,
                    });
                }
                Some(produced)
            }
            (Some(produced), None) => Some(produced),
            (None, fixed) => fixed,
        };
        if let Some(shape) = input {
            known = Some(f.output_shape(&shape).map_err(|e| match e {
                DiffError::InputShape { expected, found, .. } if i > 0 => DiffError::Composition {
                    boundary: i,
                    left: fns[i - 1].name(),
                    right: f.name(),
                    produced: found,
                    expected,
                },
                other => other,
            })?);
        }
    }
    Ok(Chain { stages: fns })
}

impl Chain {
    pub fn stages(&self) -> &[FnRef] {
        &self.stages
    }

    /// Runs the forward pass keeping every intermediate (input included).
    fn forward_trace(&self, x: &Tensor) -> Result<Vec<Tensor>, DiffError> {
        let mut values = Vec::with_capacity(self.stages.len() + 1);
        values.push(x.clone());
        for stage in &self.stages {
            let next = stage.forward(values.last().expect("non-empty"))?;
            values.push(next);
        }
        Ok(values)
    }

    fn backward(&self, values: &[Tensor], cotangent: &Tensor) -> Result<Tensor, DiffError> {
        let mut v = cotangent.clone();
        for (stage, input) in self.stages.iter().zip(values).rev() {
            v = stage.vjp(input, &v)?;
        }
        Ok(v)
    }
}

impl DifferentiableFn for Chain {
    fn name(&self) -> String {
        let names: Vec<String> = self.stages.iter().map(|s| s.name()).collect();
        format!("chain[{}]", names.join(" -> "))
    }

    fn input_shape(&self) -> Option<Vec<usize>> {
        self.stages[0].input_shape()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        self.stages
            .iter()
            .try_fold(input.to_vec(), |shape, s| s.output_shape(&shape))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        let mut y = x.clone();
        for stage in &self.stages {
            y = stage.forward(&y)?;
        }
        Ok(y)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        let values = self.forward_trace(x)?;
        self.backward(&values, cotangent)
    }

    fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor), DiffError> {
        let values = self.forward_trace(x)?;
        let out = values.last().expect("non-empty");
        let value = out
            .as_scalar()
            .ok_or_else(|| DiffError::NonScalarOutput(out.shape().to_vec()))?;
        let g = self.backward(&values, &Tensor::scalar(1.0))?;
        Ok((value, g))
    }
}

/// Gradient of a scalar-output function at `x`.
pub fn grad(loss: &dyn DifferentiableFn, x: &Tensor) -> Result<Tensor, DiffError> {
    value_and_grad(loss, x).map(|(_, g)| g)
}

pub fn value_and_grad(loss: &dyn DifferentiableFn, x: &Tensor) -> Result<(f64, Tensor), DiffError> {
    let (value, g) = loss.value_and_grad(x)?;
    if !value.is_finite() {
        return Err(DiffError::NonFinite { op: loss.name() });
    }
    Ok((value, g))
}

/// Weighted sum `Σ cᵢ gᵢ(x)` of scalar-output functions sharing one input.
pub struct WeightedSum {
    terms: Vec<(f64, FnRef)>,
}

impl WeightedSum {
    pub fn new(terms: Vec<(f64, FnRef)>) -> Self {
        Self { terms }
    }
}

impl DifferentiableFn for WeightedSum {
    fn name(&self) -> String {
        "weighted_sum".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        for (_, t) in &self.terms {
            let out = t.output_shape(input)?;
            if out.iter().product::<usize>() != 1 {
                return Err(DiffError::NonScalarOutput(out));
            }
        }
        Ok(vec![1])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        let mut total = 0.0;
        for (c, t) in &self.terms {
            let y = t.forward(x)?;
            let v = y
                .as_scalar()
                .ok_or_else(|| DiffError::NonScalarOutput(y.shape().to_vec()))?;
            total += c * v;
        }
        Ok(Tensor::scalar(total))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("weighted_sum", &[1], cotangent)?;
        let mut acc = vec![0.0; x.len()];
        for (c, t) in &self.terms {
            let g = t.vjp(x, &Tensor::scalar(c * cotangent.data()[0]))?;
            for (a, gi) in acc.iter_mut().zip(g.data()) {
                *a += gi;
            }
        }
        Tensor::new(x.shape().to_vec(), acc)
    }
}

/// Elementwise `x ↦ c·x`.
pub struct Scale(pub f64);

impl DifferentiableFn for Scale {
    fn name(&self) -> String {
        format!("scale({})", self.0)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        Ok(x.map(|v| self.0 * v))
    }

    fn vjp(&self, _x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        Ok(cotangent.map(|v| self.0 * v))
    }
}

pub struct Identity;

impl DifferentiableFn for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        Ok(x.clone())
    }

    fn vjp(&self, _x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        Ok(cotangent.clone())
    }
}

/// Elementwise `x ↦ x²`.
pub struct Square;

impl DifferentiableFn for Square {
    fn name(&self) -> String {
        "square".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        Ok(x.map(|v| v * v))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("square", x.shape(), cotangent)?;
        let data = x
            .data()
            .iter()
            .zip(cotangent.data())
            .map(|(&xi, &vi)| 2.0 * xi * vi)
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Sum of all elements, producing a scalar.
pub struct SumAll;

impl DifferentiableFn for SumAll {
    fn name(&self) -> String {
        "sum".into()
    }

    fn output_shape(&self, _input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(vec![1])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        Ok(Tensor::scalar(x.data().iter().sum()))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("sum", &[1], cotangent)?;
        let v = cotangent.data()[0];
        Tensor::new(x.shape().to_vec(), vec![v; x.len()])
    }
}

/// Euclidean norm of all elements, with the clamped square-root derivative at zero.
pub struct L2Norm;

impl DifferentiableFn for L2Norm {
    fn name(&self) -> String {
        "l2_norm".into()
    }

    fn output_shape(&self, _input: &[usize]) -> Result<Vec<usize>, DiffError> {
        Ok(vec![1])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        Ok(Tensor::scalar(x.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_cotangent("l2_norm", &[1], cotangent)?;
        let u: f64 = x.data().iter().map(|v| v * v).sum();
        // d‖x‖/dx = (d√u/du)·2x
        let s = 2.0 * clamped_sqrt_derivative(u) * cotangent.data()[0];
        Ok(x.map(|v| s * v))
    }
}

/// Elementwise product with a fixed weight tensor.
pub struct Hadamard {
    weights: Tensor,
}

impl Hadamard {
    pub fn new(weights: Tensor) -> Self {
        Self { weights }
    }
}

impl DifferentiableFn for Hadamard {
    fn name(&self) -> String {
        "hadamard".into()
    }

    fn input_shape(&self) -> Option<Vec<usize>> {
        Some(self.weights.shape().to_vec())
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, DiffError> {
        if input != self.weights.shape() {
            return Err(DiffError::InputShape {
                op: self.name(),
                expected: self.weights.shape().to_vec(),
                found: input.to_vec(),
            });
        }
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, DiffError> {
        check_input("hadamard", self.weights.shape(), x)?;
        let data = x
            .data()
            .iter()
            .zip(self.weights.data())
            .map(|(a, w)| a * w)
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, DiffError> {
        check_input("hadamard", self.weights.shape(), x)?;
        self.forward(cotangent)
    }
}
