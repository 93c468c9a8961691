//! White-box attacks against a [`Model`]: I-FGSM, C&W and PerC-C&W, DDN,
//! PerC-AL and its texture-weighted variant.
//!
//! Every attack returns an [`AttackOutcome`] whose image is on the 1/255
//! grid; a successful outcome is adversarial when re-evaluated as stored.

mod cw;
mod ddn;
mod ifgsm;
mod perc_al;

pub use cw::{cw, cw_with_distance, perc_cw, Distance, SquaredL2};
pub use ddn::{ddn, project_to_sphere};
pub use ifgsm::ifgsm;
pub use perc_al::{perc_al, perc_al_structured, perc_al_with_sigma};

use serde::{Deserialize, Serialize};

use crate::classifier::{cross_entropy_grad, is_adversarial, logit_margin, Logits, Model};
use crate::colorspace::ImageTensor;
use crate::error::{Error, Result};
use crate::perceptual::c2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Targeted,
    Untargeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Ifgsm,
    Cw,
    PercCw,
    Ddn,
    PercAl,
    PercAlStructured,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Ifgsm,
        AttackKind::Cw,
        AttackKind::PercCw,
        AttackKind::Ddn,
        AttackKind::PercAl,
        AttackKind::PercAlStructured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::Cw => "cw",
            AttackKind::PercCw => "perc_cw",
            AttackKind::Ddn => "ddn",
            AttackKind::PercAl => "perc_al",
            AttackKind::PercAlStructured => "perc_al_structured",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            AttackKind::Ifgsm => "I-FGSM",
            AttackKind::Cw => "C&W",
            AttackKind::PercCw => "PerC-C&W",
            AttackKind::Ddn => "DDN",
            AttackKind::PercAl => "PerC-AL",
            AttackKind::PercAlStructured => "PerC-AL+structure",
        }
    }

    pub fn is_cw_family(self) -> bool {
        matches!(self, AttackKind::Cw | AttackKind::PercCw)
    }

    pub fn is_perceptual(self) -> bool {
        matches!(self, AttackKind::PercCw | AttackKind::PercAl | AttackKind::PercAlStructured)
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack `{s}`")))
    }
}

/// The three operating points: 3×100 / 5×200 / 9×1000 for the C&W family,
/// 100 / 300 / 1000 iterations for DDN and PerC-AL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Low,
    Mid,
    High,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Low, Tier::Mid, Tier::High];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// λ search steps (C&W family) or maximum number of ε rounds (I-FGSM); 1 otherwise.
    pub search_steps: usize,
    /// Iterations per search step / per round, or the total K.
    pub iterations: usize,
}

impl Budget {
    pub fn label(&self, kind: AttackKind) -> String {
        match kind {
            AttackKind::Cw | AttackKind::PercCw => format!("{}x{}", self.search_steps, self.iterations),
            AttackKind::Ifgsm => "-".into(),
            _ => self.iterations.to_string(),
        }
    }
}

/// Endpoints of a cosine-annealed step size; the step count comes from the budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anneal {
    pub start: f64,
    pub end: f64,
}

/// `end + ½(start − end)(1 + cos(πk/K))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl CosineSchedule {
    pub fn new(start: f64, end: f64, steps: usize) -> Self {
        Self { start, end, steps }
    }

    pub fn value(&self, k: usize) -> f64 {
        if self.steps == 0 {
            return self.end;
        }
        let k = k.min(self.steps);
        if k == self.steps {
            return self.end;
        }
        let phase = std::f64::consts::PI * k as f64 / self.steps as f64;
        self.end + 0.5 * (self.start - self.end) * (1.0 + phase.cos())
    }
}

const LAMBDA_TARGETED_CW: [f64; 3] = [1.0, 1.0, 1.0];
const LAMBDA_UNTARGETED_CW: [f64; 3] = [0.1, 1.0, 1.0];
const LAMBDA_TARGETED_PERC_CW: [f64; 3] = [10.0, 10.0, 10.0];
const LAMBDA_UNTARGETED_PERC_CW: [f64; 3] = [100.0, 100.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: Mode,
    pub kappa: f64,
    pub budget: Budget,
    /// I-FGSM step.
    pub alpha: f64,
    /// Classification-loss step: DDN's α, PerC-AL's α_l.
    pub loss_step: Anneal,
    /// PerC-AL's color-distance step α_c.
    pub color_step: Anneal,
    /// Adam learning rate for the C&W family.
    pub learning_rate: f64,
    pub lambda_init: f64,
    /// λ is searched within `[lambda_init / range, lambda_init · range]`.
    pub lambda_range: f64,
    /// Stop a λ search step early once it has a verified candidate and the objective stalls.
    pub early_abort: bool,
    /// DDN's norm adjustment factor.
    pub gamma: f64,
    /// DDN's initial ε.
    pub epsilon_init: f64,
    /// Weight PerC-AL's color distance by `1 − σ`.
    pub structure: bool,
    pub seed: u64,
    #[serde(default)]
    pub record_trace: bool,
}

impl AttackConfig {
    /// Published parameters for `kind` at the given operating point.
    pub fn defaults(kind: AttackKind, mode: Mode, kappa: f64, tier: Tier) -> Self {
        let i = tier.index();
        let budget = match kind {
            AttackKind::Ifgsm => Budget {
                search_steps: 255,
                iterations: 100,
            },
            AttackKind::Cw | AttackKind::PercCw => Budget {
                search_steps: [3, 5, 9][i],
                iterations: [100, 200, 1000][i],
            },
            _ => Budget {
                search_steps: 1,
                iterations: [100, 300, 1000][i],
            },
        };
        let lambda_init = match (kind, mode) {
            (AttackKind::PercCw, Mode::Targeted) => LAMBDA_TARGETED_PERC_CW[i],
            (AttackKind::PercCw, Mode::Untargeted) => LAMBDA_UNTARGETED_PERC_CW[i],
            (_, Mode::Targeted) => LAMBDA_TARGETED_CW[i],
            (_, Mode::Untargeted) => LAMBDA_UNTARGETED_CW[i],
        };
        let color_start = if mode == Mode::Untargeted && kappa == 0.0 { 0.1 } else { 0.5 };
        Self {
            mode,
            kappa,
            budget,
            alpha: 1.0 / 255.0,
            loss_step: Anneal { start: 1.0, end: 0.01 },
            color_step: Anneal {
                start: color_start,
                end: 0.05,
            },
            learning_rate: 0.01,
            lambda_init,
            lambda_range: 1000.0,
            early_abort: true,
            gamma: 0.05,
            epsilon_init: 1.0,
            structure: kind == AttackKind::PercAlStructured,
            seed: 0,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("loss_step.start", self.loss_step.start),
            ("loss_step.end", self.loss_step.end),
            ("color_step.start", self.color_step.start),
            ("color_step.end", self.color_step.end),
            ("learning_rate", self.learning_rate),
            ("lambda_init", self.lambda_init),
            ("epsilon_init", self.epsilon_init),
            ("gamma", self.gamma),
        ];
        for (what, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{what} must be positive and finite, got {v}")));
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.gamma >= 1.0 {
            return Err(Error::Config(format!("gamma must be < 1, got {}", self.gamma)));
        }
        if !(self.lambda_range >= 1.0 && self.lambda_range.is_finite()) {
            return Err(Error::Config(format!("lambda_range must be >= 1, got {}", self.lambda_range)));
        }
        if self.budget.search_steps == 0 || self.budget.iterations == 0 {
            return Err(Error::Config("budget search steps and iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth plus the optional target label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub label: usize,
    pub target: Option<usize>,
}

impl Goal {
    pub fn untargeted(label: usize) -> Self {
        Self { label, target: None }
    }

    pub fn targeted(label: usize, target: usize) -> Self {
        Self {
            label,
            target: Some(target),
        }
    }
}

/// Size of `δ = x′ − x`: L2 in `[0, 1]` units, L∞ in 8-bit levels, C2 in ΔE00 units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub l2: f64,
    pub linf: f64,
    pub c2: f64,
}

pub fn perturbation_metrics(x: &ImageTensor, adv: &ImageTensor) -> Result<Metrics> {
    x.same_dims(adv)?;
    let mut ss = 0.0;
    let mut linf: f64 = 0.0;
    for (a, b) in x.data().iter().zip(adv.data()) {
        let d = b - a;
        ss += d * d;
        linf = linf.max(d.abs());
    }
    Ok(Metrics {
        l2: ss.sqrt(),
        linf: linf * 255.0,
        c2: c2(x, adv)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Sign,
    Adam,
    Loss,
    Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 1-based within the whole attack.
    pub iteration: usize,
    pub step: StepKind,
    /// Adversarial status of the iterate the step was computed at.
    pub adversarial: bool,
    /// Distance of that iterate (the attack's own metric).
    pub distance: f64,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub search_step: usize,
}

/// One λ search step of the C&W family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub lambda: f64,
    pub success: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub adversarial: ImageTensor,
    pub success: bool,
    pub iterations: usize,
    pub metrics: Metrics,
    /// Logit margin of the returned image (positive once adversarial at κ = 0).
    pub margin: f64,
    pub trace: Vec<TraceEntry>,
    pub searches: Vec<SearchRecord>,
}

/// Runs `kind` with `config`.
pub fn run(kind: AttackKind, model: &Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<AttackOutcome> {
    match kind {
        AttackKind::Ifgsm => ifgsm(model, x, goal, config),
        AttackKind::Cw => cw(model, x, goal, config),
        AttackKind::PercCw => perc_cw(model, x, goal, config),
        AttackKind::Ddn => ddn(model, x, goal, config),
        AttackKind::PercAl => perc_al(model, x, goal, config),
        AttackKind::PercAlStructured => perc_al_structured(model, x, goal, config),
    }
}

/// Success predicate and loss directions for one attack invocation.
pub(crate) struct Judge<'a> {
    model: &'a Model,
    label: usize,
    target: Option<usize>,
    kappa: f64,
}

impl<'a> Judge<'a> {
    pub(crate) fn new(model: &'a Model, x: &ImageTensor, goal: Goal, config: &AttackConfig) -> Result<Self> {
        config.validate()?;
        let classes = model.classes();
        if goal.label >= classes {
            return Err(Error::InvalidLabel {
                label: goal.label,
                classes,
            });
        }
        let target = match config.mode {
            Mode::Untargeted => None,
            Mode::Targeted => {
                let t = goal
                    .target
                    .ok_or_else(|| Error::Config("targeted mode needs a target label".into()))?;
                if t >= classes {
                    return Err(Error::InvalidLabel { label: t, classes });
                }
                if t == goal.label {
                    return Err(Error::Config("target equals the true label".into()));
                }
                Some(t)
            }
        };
        let (h, w) = model.input_dims();
        if x.dims() != (h, w) {
            return Err(Error::InputDimensions {
                expected: (h, w, 3),
                found: (x.height(), x.width(), 3),
            });
        }
        Ok(Self {
            model,
            label: goal.label,
            target,
            kappa: config.kappa,
        })
    }

    pub(crate) fn targeted(&self) -> bool {
        self.target.is_some()
    }

    /// The class whose logit the margin is measured on: `t` or `y`.
    pub(crate) fn class(&self) -> usize {
        self.target.unwrap_or(self.label)
    }

    pub(crate) fn kappa(&self) -> f64 {
        self.kappa
    }

    pub(crate) fn adversarial(&self, z: &Logits) -> Result<bool> {
        is_adversarial(z, self.label, self.target, self.kappa)
    }

    pub(crate) fn margin(&self, z: &Logits) -> Result<f64> {
        logit_margin(z, self.class(), self.targeted())
    }

    pub(crate) fn logits(&self, x: &ImageTensor) -> Result<Logits> {
        self.model.forward(x)
    }

    /// Logits and the gradient of the direction that increases adversarial effect:
    /// `−∇J(x, t)` when targeted, `+∇J(x, y)` otherwise.
    pub(crate) fn loss_direction(&self, x: &ImageTensor, iteration: usize) -> Result<(Logits, Vec<f64>)> {
        let class = self.class();
        let sign = if self.targeted() { -1.0 } else { 1.0 };
        let (z, mut g) = self.model.logits_and_input_grad(x, |z| cross_entropy_grad(z, class))?;
        for v in &mut g {
            *v *= sign;
        }
        ensure_finite(&g, "classification-loss gradient", iteration)?;
        Ok((z, g))
    }
}

pub(crate) fn ensure_finite(v: &[f64], what: &'static str, iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { what, iteration })
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `scale · v / ‖v‖₂`, or zeros when `v` vanishes.
pub(crate) fn normalized(v: &[f64], scale: f64) -> Vec<f64> {
    let n = l2(v);
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| scale * x / n).collect()
    }
}

/// `quantize(clip(x + δ))`.
pub(crate) fn perturb(x: &ImageTensor, delta: &[f64]) -> Result<ImageTensor> {
    let data = x.data().iter().zip(delta).map(|(a, d)| a + d).collect();
    Ok(ImageTensor::from_clipped(x.height(), x.width(), data)?.quantize())
}

pub(crate) fn finish(
    x: &ImageTensor,
    judge: &Judge<'_>,
    adversarial: ImageTensor,
    success: bool,
    iterations: usize,
    trace: Vec<TraceEntry>,
    searches: Vec<SearchRecord>,
) -> Result<AttackOutcome> {
    debug_assert!(adversarial.is_quantized());
    let z = judge.logits(&adversarial)?;
    let margin = judge.margin(&z)?;
    let success = success && judge.adversarial(&z)?;
    Ok(AttackOutcome {
        metrics: perturbation_metrics(x, &adversarial)?,
        adversarial,
        success,
        iterations,
        margin,
        trace,
        searches,
    })
}
