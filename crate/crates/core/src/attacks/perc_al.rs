use super::{
    ensure_finite, finish, normalized, perturb, AttackConfig, AttackOutcome, CosineSchedule, Goal, Judge, StepKind,
    TraceEntry,
};
use crate::classifier::{cross_entropy_grad, Model};
use crate::colorspace::ImageTensor;
use crate::error::Result;
use crate::perceptual::{texture_complexity, ColorDistance, TextureMap};

/// Alternating-loss attack: a loss step while the previous iterate is not
/// adversarial, a C2-descent step once it is. `config.structure` switches to
/// the `(1 − σ)`-weighted distance with `σ` computed from `x`.
pub fn perc_al(model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    if config.structure {
        let sigma = texture_complexity(x)?;
        perc_al_with_sigma(model, x, goal, config, Some(&sigma))
    } else {
        perc_al_with_sigma(model, x, goal, config, None)
    }
}

/// [`perc_al`] with the texture-weighted color distance regardless of `config.structure`.
pub fn perc_al_structured(model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    let sigma = texture_complexity(x)?;
    perc_al_with_sigma(model, x, goal, config, Some(&sigma))
}

/// [`perc_al`] with an explicit texture map (`None` for the plain distance).
pub fn perc_al_with_sigma(
    model: &Model,
    x: &ImageTensor,
    goal: Goal,
    config: &AttackConfig,
    sigma: Option<&TextureMap>,
) -> Result<AttackOutcome> {
    let judge = Judge::new(model, x, goal, config)?;
    let distance = match sigma {
        Some(s) => ColorDistance::weighted(x, s)?,
        None => ColorDistance::new(x),
    };
    let k_total = config.budget.iterations;
    let loss_step = CosineSchedule::new(config.loss_step.start, config.loss_step.end, k_total);
    let color_step = CosineSchedule::new(config.color_step.start, config.color_step.end, k_total);
    let class = judge.class();
    let sign = if judge.targeted() { -1.0 } else { 1.0 };

    let mut delta = vec![0.0; x.data().len()];
    let mut adv = x.quantize();
    let mut best: Option<(f64, ImageTensor)> = None;
    let mut trace = Vec::new();

    for k in 1..=k_total {
        let (z, cache) = model.forward_cached(&adv)?;
        let is_adv = judge.adversarial(&z)?;
        let (step, dist) = if is_adv {
            let (d, g) = distance.value_and_grad(&adv)?;
            ensure_finite(&g, "color-distance gradient", k)?;
            if best.as_ref().map_or(true, |(b, _)| d < *b) {
                best = Some((d, adv.clone()));
            }
            // ∇(−C2)
            let g: Vec<f64> = g.iter().map(|v| -v).collect();
            let g = normalized(&g, color_step.value(k - 1));
            delta.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
            (StepKind::Color, d)
        } else {
            let dz = cross_entropy_grad(&z, class)?;
            let g: Vec<f64> = model.backward_input(&cache, &dz).iter().map(|v| sign * v).collect();
            ensure_finite(&g, "classification-loss gradient", k)?;
            let g = normalized(&g, loss_step.value(k - 1));
            delta.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
            let d = if config.record_trace {
                distance.value(&adv)?
            } else {
                f64::NAN
            };
            (StepKind::Loss, d)
        };
        if config.record_trace {
            trace.push(TraceEntry {
                iteration: k,
                step,
                adversarial: is_adv,
                distance: dist,
                lambda: None,
                epsilon: None,
                search_step: 0,
            });
        }
        adv = perturb(x, &delta)?;
    }
    if judge.adversarial(&judge.logits(&adv)?)? {
        let d = distance.value(&adv)?;
        if best.as_ref().map_or(true, |(b, _)| d < *b) {
            best = Some((d, adv.clone()));
        }
    }
    match best {
        Some((_, b)) => finish(x, &judge, b, true, k_total, trace, Vec::new()),
        None => finish(x, &judge, adv, false, k_total, trace, Vec::new()),
    }
}
