//! Grid search of one attack hyperparameter on a held-out tuning set.
//!
//! The C&W family tunes its λ initialization; DDN and PerC-AL tune a common
//! scale on their L2-norm step lengths (α, α_l, α_c and DDN's ε₀). Selection
//! prefers the most successes, then the smallest mean of the attack's own
//! perturbation metric, then the earlier grid value.

use serde::{Deserialize, Serialize};

use crate::attacks::{run, AttackConfig, AttackKind, Goal, Metrics};
use crate::classifier::Model;
use crate::colorspace::ImageTensor;
use crate::error::{Error, Result};

pub const LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const STEP_SCALE_GRID: [f64; 5] = [1.0, 0.5, 0.25, 0.1, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    LambdaInit,
    StepScale,
}

impl Parameter {
    pub fn for_kind(kind: AttackKind) -> Option<Self> {
        match kind {
            AttackKind::Ifgsm => None,
            AttackKind::Cw | AttackKind::PercCw => Some(Parameter::LambdaInit),
            AttackKind::Ddn | AttackKind::PercAl | AttackKind::PercAlStructured => Some(Parameter::StepScale),
        }
    }

    pub fn default_grid(self) -> &'static [f64] {
        match self {
            Parameter::LambdaInit => &LAMBDA_GRID,
            Parameter::StepScale => &STEP_SCALE_GRID,
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &AttackConfig, value: f64) -> AttackConfig {
        let mut c = base.clone();
        match self {
            Parameter::LambdaInit => c.lambda_init = value,
            Parameter::StepScale => {
                c.loss_step.start *= value;
                c.loss_step.end *= value;
                c.color_step.start *= value;
                c.color_step.end *= value;
                c.epsilon_init *= value;
            }
        }
        c
    }
}

/// The size measure each attack minimizes.
pub fn objective_metric(kind: AttackKind, m: &Metrics) -> f64 {
    match kind {
        AttackKind::Ifgsm => m.linf,
        AttackKind::Cw | AttackKind::Ddn => m.l2,
        AttackKind::PercCw | AttackKind::PercAl | AttackKind::PercAlStructured => m.c2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    pub successes: usize,
    pub mean_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub attack: AttackKind,
    pub parameter: Parameter,
    pub images: usize,
    pub points: Vec<GridPoint>,
    pub selected: f64,
}

/// Index of the winning point under the selection rule.
pub fn select(points: &[GridPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let q = &points[b];
                p.successes > q.successes
                    || (p.successes == q.successes
                        && match (p.mean_metric, q.mean_metric) {
                            (Some(a), Some(b)) => a < b,
                            (Some(_), None) => true,
                            _ => false,
                        })
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Runs `kind` at every grid value over `tuning` and returns the selected value.
pub fn tune(
    kind: AttackKind,
    model: &Model,
    tuning: &[(ImageTensor, Goal)],
    base: &AttackConfig,
    parameter: Parameter,
    grid: &[f64],
) -> Result<TuningResult> {
    if tuning.is_empty() {
        return Err(Error::Config("tuning set is empty".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config(format!("empty {parameter:?} grid")));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let config = parameter.apply(base, value);
        let mut successes = 0usize;
        let mut total = 0.0;
        for (x, goal) in tuning {
            let o = run(kind, model, x, *goal, &config)?;
            if o.success {
                successes += 1;
                total += objective_metric(kind, &o.metrics);
            }
        }
        points.push(GridPoint {
            value,
            successes,
            mean_metric: (successes > 0).then(|| total / successes as f64),
        });
    }
    let i = select(&points).expect("grid is non-empty");
    Ok(TuningResult {
        attack: kind,
        parameter,
        images: tuning.len(),
        selected: points[i].value,
        points,
    })
}
