use super::{
    ensure_finite, finish, AttackConfig, AttackOutcome, Goal, Judge, SearchRecord, StepKind, TraceEntry,
};
use crate::classifier::{margin_loss, margin_loss_grad, Model};
use crate::colorspace::ImageTensor;
use crate::error::Result;
use crate::perceptual::ColorDistance;

/// Inputs are squeezed into `[ξ, 1 − ξ]` before `arctanh`.
pub const TANH_SQUEEZE: f64 = 1e-6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Penalty term of the C&W objective, measured from a fixed original.
pub trait Distance {
    fn value(&self, x2: &ImageTensor) -> Result<f64>;
    fn value_and_grad(&self, x2: &ImageTensor) -> Result<(f64, Vec<f64>)>;
}

/// `‖x′ − x‖₂²`.
pub struct SquaredL2 {
    original: Vec<f64>,
}

impl SquaredL2 {
    pub fn new(original: &ImageTensor) -> Self {
        Self {
            original: original.data().to_vec(),
        }
    }
}

impl Distance for SquaredL2 {
    fn value(&self, x2: &ImageTensor) -> Result<f64> {
        Ok(x2.data().iter().zip(&self.original).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    fn value_and_grad(&self, x2: &ImageTensor) -> Result<(f64, Vec<f64>)> {
        let g: Vec<f64> = x2.data().iter().zip(&self.original).map(|(a, b)| 2.0 * (a - b)).collect();
        Ok((self.value(x2)?, g))
    }
}

impl Distance for ColorDistance {
    fn value(&self, x2: &ImageTensor) -> Result<f64> {
        ColorDistance::value(self, x2)
    }

    fn value_and_grad(&self, x2: &ImageTensor) -> Result<(f64, Vec<f64>)> {
        ColorDistance::value_and_grad(self, x2)
    }
}

/// C&W with the squared-L2 penalty.
pub fn cw(model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    cw_with_distance(model, x, goal, config, &SquaredL2::new(x))
}

/// C&W with the C2 penalty `‖ΔE00(x, x′)‖₂`.
pub fn perc_cw(model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    cw_with_distance(model, x, goal, config, &ColorDistance::new(x))
}

/// The tanh-space optimization of `D(x′) + λ·f(x′)` shared by C&W and PerC-C&W.
///
/// λ is bisected in log space inside `[λ₀ / range, λ₀ · range]`: a search step
/// that found an adversarial image lowers the upper bound, one that did not
/// raises the lower bound. Candidates are quantized and re-verified before they
/// are kept; the smallest-penalty verified candidate is returned.
pub fn cw_with_distance(
    model: &Model,
    x: &ImageTensor,
    goal: Goal,
    config: &AttackConfig,
    distance: &dyn Distance,
) -> Result<AttackOutcome> {
    let judge = Judge::new(model, x, goal, config)?;
    let class = judge.class();
    let targeted = judge.targeted();
    let kappa = judge.kappa();
    let n = x.data().len();
    let w0: Vec<f64> = x
        .data()
        .iter()
        .map(|v| (2.0 * v.clamp(TANH_SQUEEZE, 1.0 - TANH_SQUEEZE) - 1.0).atanh())
        .collect();

    let mut lo = config.lambda_init / config.lambda_range;
    let mut hi = config.lambda_init * config.lambda_range;
    let mut lambda = config.lambda_init;
    let mut best: Option<(f64, ImageTensor)> = None;
    let mut best_continuous = f64::INFINITY;
    let mut last = x.quantize();
    let mut iteration = 0usize;
    let mut trace = Vec::new();
    let mut searches = Vec::with_capacity(config.budget.search_steps);
    let check_every = (config.budget.iterations / 10).max(1);

    for s in 0..config.budget.search_steps {
        let mut w = vec![0.0; n];
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        let mut found = false;
        let mut prev = f64::INFINITY;
        let mut used = 0usize;
        for it in 0..config.budget.iterations {
            iteration += 1;
            used += 1;
            let th: Vec<f64> = w0.iter().zip(&w).map(|(a, b)| (a + b).tanh()).collect();
            let adv = ImageTensor::new(x.height(), x.width(), th.iter().map(|t| 0.5 * (t + 1.0)).collect())?;
            let (z, cache) = model.forward_cached(&adv)?;
            ensure_finite(z.values(), "logits", iteration)?;
            let f = margin_loss(&z, class, kappa, targeted)?;
            let dz = margin_loss_grad(&z, class, kappa, targeted)?;
            let g_model = model.backward_input(&cache, &dz);
            let (d, g_dist) = distance.value_and_grad(&adv)?;
            let loss = d + lambda * f;
            if !loss.is_finite() {
                return Err(crate::error::Error::NonFiniteGradient {
                    what: "C&W objective",
                    iteration,
                });
            }
            let is_adv = judge.adversarial(&z)?;
            if config.record_trace {
                trace.push(TraceEntry {
                    iteration,
                    step: StepKind::Adam,
                    adversarial: is_adv,
                    distance: d,
                    lambda: Some(lambda),
                    epsilon: None,
                    search_step: s,
                });
            }
            if is_adv && (!found || d < best_continuous) {
                let q = adv.quantize();
                if judge.adversarial(&judge.logits(&q)?)? {
                    found = true;
                    let dq = distance.value(&q)?;
                    if best.as_ref().map_or(true, |(b, _)| dq < *b) {
                        best = Some((dq, q));
                        best_continuous = d;
                    }
                }
            }
            let step = 1 + it as i32;
            let mut grad: Vec<f64> = g_dist
                .iter()
                .zip(&g_model)
                .zip(&th)
                .map(|((gd, gm), t)| (gd + lambda * gm) * 0.5 * (1.0 - t * t))
                .collect();
            ensure_finite(&grad, "C&W gradient", iteration)?;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for i in 0..n {
                let g = grad[i];
                m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g;
                m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * g * g;
                grad[i] = config.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + ADAM_EPS);
                w[i] -= grad[i];
            }
            last = adv.quantize();
            // only steps that already hold a verified candidate may stop early
            if config.early_abort && it % check_every == 0 {
                if found && loss > prev - 1e-4 * prev.abs() {
                    break;
                }
                prev = loss;
            }
        }
        searches.push(SearchRecord {
            lambda,
            success: found,
            iterations: used,
        });
        if found {
            hi = lambda;
        } else {
            lo = lambda;
        }
        lambda = (lo * hi).sqrt();
    }

    match best {
        Some((_, q)) => finish(x, &judge, q, true, iteration, trace, searches),
        None => finish(x, &judge, last, false, iteration, trace, searches),
    }
}
