use super::{finish, AttackConfig, AttackOutcome, Goal, Judge, StepKind, TraceEntry};
use crate::classifier::Model;
use crate::colorspace::{quantize_component, ImageTensor};
use crate::error::Result;

const GRID: f64 = 1.0 / 255.0;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Quantized value of `v` kept inside `[lo, hi]` (moving one level inward if rounding overshoots).
fn grid_within(v: f64, lo: f64, hi: f64) -> f64 {
    let mut q = quantize_component(v);
    if q > hi + 1e-12 {
        q -= GRID;
    }
    if q < lo - 1e-12 {
        q += GRID;
    }
    q.clamp(0.0, 1.0)
}

/// Iterative FGSM with rounds of growing L∞ bound `ε = r/255`; each round restarts
/// from `x` and runs at most `budget.iterations` sign steps of size `alpha`.
pub fn ifgsm(model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    let judge = Judge::new(model, x, goal, config)?;
    let record = config.record_trace;
    let mut trace = Vec::new();
    let mut iteration = 0usize;
    let mut last = x.quantize();
    for round in 1..=config.budget.search_steps {
        let eps = round as f64 * GRID;
        let mut adv = x.quantize();
        for _ in 0..config.budget.iterations {
            iteration += 1;
            let (z, g) = judge.loss_direction(&adv, iteration)?;
            let is_adv = judge.adversarial(&z)?;
            if record {
                trace.push(TraceEntry {
                    iteration,
                    step: StepKind::Sign,
                    adversarial: is_adv,
                    distance: linf(x, &adv),
                    lambda: None,
                    epsilon: Some(eps),
                    search_step: round,
                });
            }
            if is_adv {
                return finish(x, &judge, adv, true, iteration - 1, trace, Vec::new());
            }
            let data = adv
                .data()
                .iter()
                .zip(x.data())
                .zip(&g)
                .map(|((&a, &o), &gi)| {
                    let lo = (o - eps).max(0.0);
                    let hi = (o + eps).min(1.0);
                    grid_within((a + config.alpha * sign(gi)).clamp(lo, hi), lo, hi)
                })
                .collect();
            adv = ImageTensor::new(x.height(), x.width(), data)?;
        }
        let z = judge.logits(&adv)?;
        if judge.adversarial(&z)? {
            return finish(x, &judge, adv, true, iteration, trace, Vec::new());
        }
        last = adv;
    }
    finish(x, &judge, last, false, iteration, trace, Vec::new())
}

fn linf(x: &ImageTensor, y: &ImageTensor) -> f64 {
    x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(3.0), 1.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn grid_clamp_stays_in_bound() {
        let o = 0.5004;
        let eps = 2.0 * GRID;
        let q = grid_within(o + eps, o - eps, o + eps);
        assert!(q <= o + eps + 1e-12);
        assert!(((q * 255.0).round() - q * 255.0).abs() < 1e-9);
    }
}
