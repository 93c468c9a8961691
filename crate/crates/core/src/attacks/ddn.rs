use super::{
    finish, l2, normalized, perturb, AttackConfig, AttackOutcome, CosineSchedule, Goal, Judge, StepKind, TraceEntry,
};
use crate::classifier::Model;
use crate::colorspace::ImageTensor;
use crate::error::Result;

/// Rescales `delta` onto the L2 sphere of radius `eps` (zero stays zero).
pub fn project_to_sphere(delta: &mut [f64], eps: f64) {
    let n = l2(delta);
    if n > 0.0 {
        let s = eps / n;
        delta.iter_mut().for_each(|d| *d *= s);
    }
}

fn l2_between(x: &ImageTensor, y: &ImageTensor) -> f64 {
    x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Decoupled direction and norm: a normalized loss step followed by projection
/// onto an ε-sphere whose radius shrinks by `1 − γ` while adversarial and grows
/// by `1 + γ` otherwise. Iterates are clipped and quantized every step.
pub fn ddn(model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    let judge = Judge::new(model, x, goal, config)?;
    let k_total = config.budget.iterations;
    let step = CosineSchedule::new(config.loss_step.start, config.loss_step.end, k_total);
    let mut delta = vec![0.0; x.data().len()];
    let mut eps = config.epsilon_init;
    let mut adv = x.quantize();
    let mut best: Option<(f64, ImageTensor)> = None;
    let mut trace = Vec::new();

    for k in 0..k_total {
        let iteration = k + 1;
        let (z, g) = judge.loss_direction(&adv, iteration)?;
        let is_adv = judge.adversarial(&z)?;
        let dist = l2_between(x, &adv);
        if is_adv && best.as_ref().map_or(true, |(b, _)| dist < *b) {
            best = Some((dist, adv.clone()));
        }
        let g = normalized(&g, step.value(k));
        delta.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
        eps *= if is_adv { 1.0 - config.gamma } else { 1.0 + config.gamma };
        project_to_sphere(&mut delta, eps);
        if config.record_trace {
            trace.push(TraceEntry {
                iteration,
                step: StepKind::Loss,
                adversarial: is_adv,
                distance: dist,
                lambda: None,
                epsilon: Some(eps),
                search_step: 0,
            });
        }
        adv = perturb(x, &delta)?;
        delta.iter_mut().zip(adv.data().iter().zip(x.data())).for_each(|(d, (a, o))| *d = a - o);
    }
    let z = judge.logits(&adv)?;
    if judge.adversarial(&z)? {
        let dist = l2_between(x, &adv);
        if best.as_ref().map_or(true, |(b, _)| dist < *b) {
            best = Some((dist, adv.clone()));
        }
    }
    match best {
        Some((_, b)) => finish(x, &judge, b, true, k_total, trace, Vec::new()),
        None => finish(x, &judge, adv, false, k_total, trace, Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_sphere() {
        let mut d = vec![0.3, -0.4, 1.2, 0.0];
        project_to_sphere(&mut d, 0.7);
        assert!((l2(&d) - 0.7).abs() < 1e-12);
        let mut z = vec![0.0; 3];
        project_to_sphere(&mut z, 1.0);
        assert_eq!(z, vec![0.0; 3]);
    }
}
