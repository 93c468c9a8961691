mod support;

use perc_core::attacks::{
    cw_with_distance, ddn, ifgsm, perc_al, perc_al_structured, perc_al_with_sigma, run, AttackConfig, AttackKind,
    Budget, Goal, Mode, StepKind, Tier,
};
use perc_core::classifier::{is_adversarial, logit_margin, Architecture, Model};
use perc_core::corpus::target_for;
use perc_core::perceptual::{texture_complexity, weighted_c2, ColorDistance, TextureMap};
use perc_core::{Error, ImageTensor};

const KINDS: [AttackKind; 6] = [
    AttackKind::Ifgsm,
    AttackKind::Cw,
    AttackKind::PercCw,
    AttackKind::Ddn,
    AttackKind::PercAl,
    AttackKind::PercAlStructured,
];

/// Defaults with a budget small enough for unit-scale runs.
fn quick(kind: AttackKind, mode: Mode, kappa: f64) -> AttackConfig {
    let mut c = AttackConfig::defaults(kind, mode, kappa, Tier::Low);
    c.budget = match kind {
        AttackKind::Ifgsm => Budget {
            search_steps: 40,
            iterations: 20,
        },
        AttackKind::Cw | AttackKind::PercCw => Budget {
            search_steps: 3,
            iterations: 60,
        },
        _ => Budget {
            search_steps: 1,
            iterations: 60,
        },
    };
    c.record_trace = true;
    c
}

fn goal(label: usize, mode: Mode, i: usize) -> Goal {
    match mode {
        Mode::Targeted => Goal::targeted(label, target_for(label, 10, i as u64)),
        Mode::Untargeted => Goal::untargeted(label),
    }
}

fn images(n: usize) -> Vec<(ImageTensor, usize)> {
    let (_, set) = support::trained_fixture();
    set.iter().take(n).map(|s| (s.image.clone(), s.label)).collect()
}

#[test]
fn fixture_is_competent() {
    let (_, correct) = support::trained_fixture();
    assert!(correct.len() >= 60, "only {} of 100 correct", correct.len());
}

#[test]
fn returned_images_are_valid_and_adversarial() {
    let (model, _) = support::trained_fixture();
    for kind in KINDS {
        for mode in [Mode::Targeted, Mode::Untargeted] {
            let config = quick(kind, mode, 0.0);
            for (i, (x, y)) in images(3).into_iter().enumerate() {
                let g = goal(y, mode, i);
                let o = run(kind, model, &x, g, &config).unwrap();
                let adv = &o.adversarial;
                assert!(adv.is_quantized(), "{kind:?}");
                assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(adv.dims(), x.dims());
                // re-ingest through 8-bit bytes
                let back = ImageTensor::from_u8(16, 16, &adv.to_u8()).unwrap();
                let z = model.forward(&back).unwrap();
                if o.success {
                    assert!(is_adversarial(&z, g.label, g.target, 0.0).unwrap(), "{kind:?} {mode:?} image {i}");
                }
                let m = perc_core::attacks::perturbation_metrics(&x, adv).unwrap();
                assert_eq!(m, o.metrics);
            }
        }
    }
}

#[test]
fn successful_attacks_meet_kappa() {
    let (model, _) = support::trained_fixture();
    for kind in [AttackKind::Cw, AttackKind::Ddn, AttackKind::PercAl, AttackKind::Ifgsm] {
        for kappa in [0.0, 2.0] {
            let config = quick(kind, Mode::Untargeted, kappa);
            for (x, y) in images(3) {
                let g = Goal::untargeted(y);
                let o = run(kind, model, &x, g, &config).unwrap();
                if o.success {
                    let z = model.forward(&o.adversarial).unwrap();
                    assert!(o.margin > kappa, "{kind:?} κ={kappa}: margin {}", o.margin);
                    assert_eq!(o.margin, logit_margin(&z, y, false).unwrap());
                }
            }
        }
    }
}

#[test]
fn attacks_are_deterministic() {
    let (model, _) = support::trained_fixture();
    let (x, y) = images(1).remove(0);
    for kind in KINDS {
        let config = quick(kind, Mode::Targeted, 0.0);
        let g = goal(y, Mode::Targeted, 0);
        let a = run(kind, model, &x, g, &config).unwrap();
        let b = run(kind, model, &x, g, &config).unwrap();
        assert_eq!(a.adversarial.to_u8(), b.adversarial.to_u8());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.searches, b.searches);
    }
}

#[test]
fn ifgsm_stays_within_its_final_round() {
    let (model, _) = support::trained_fixture();
    let config = quick(AttackKind::Ifgsm, Mode::Untargeted, 0.0);
    for (x, y) in images(4) {
        let o = ifgsm(model, &x, Goal::untargeted(y), &config).unwrap();
        let round = o.trace.last().map_or(1, |t| t.search_step) as f64;
        assert!(o.metrics.linf <= round + 1e-9, "L∞ {} beyond round {round}", o.metrics.linf);
        for t in &o.trace {
            assert_eq!(t.epsilon, Some(t.search_step as f64 / 255.0));
            assert!(t.distance <= t.search_step as f64 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn ddn_epsilon_follows_recurrence() {
    let (model, _) = support::trained_fixture();
    let config = quick(AttackKind::Ddn, Mode::Targeted, 0.0);
    for (i, (x, y)) in images(3).into_iter().enumerate() {
        let o = ddn(model, &x, goal(y, Mode::Targeted, i), &config).unwrap();
        let mut eps = config.epsilon_init;
        assert_eq!(o.trace.len(), config.budget.iterations);
        for t in &o.trace {
            eps *= if t.adversarial { 1.0 - config.gamma } else { 1.0 + config.gamma };
            assert!((t.epsilon.unwrap() - eps).abs() <= 1e-12 * eps, "iteration {}", t.iteration);
            assert_eq!(t.step, StepKind::Loss);
        }
        if o.success {
            let best = o
                .trace
                .iter()
                .filter(|t| t.adversarial)
                .map(|t| t.distance)
                .fold(f64::INFINITY, f64::min);
            assert!(o.metrics.l2 <= best + 1e-12);
        }
    }
}

#[test]
fn perc_al_alternates_on_adversarial_status() {
    let (model, _) = support::trained_fixture();
    let config = quick(AttackKind::PercAl, Mode::Targeted, 0.0);
    for (i, (x, y)) in images(3).into_iter().enumerate() {
        let o = perc_al(model, &x, goal(y, Mode::Targeted, i), &config).unwrap();
        assert_eq!(o.trace.len(), config.budget.iterations);
        for t in &o.trace {
            let want = if t.adversarial { StepKind::Color } else { StepKind::Loss };
            assert_eq!(t.step, want, "iteration {}", t.iteration);
        }
        assert!(o.trace.iter().any(|t| t.step == StepKind::Loss));
    }
}

#[test]
fn perc_al_returns_lowest_c2_adversarial_iterate() {
    let (model, _) = support::trained_fixture();
    let config = quick(AttackKind::PercAl, Mode::Untargeted, 0.0);
    for (x, y) in images(4) {
        let o = perc_al(model, &x, Goal::untargeted(y), &config).unwrap();
        if !o.success {
            continue;
        }
        let best = o
            .trace
            .iter()
            .filter(|t| t.adversarial)
            .map(|t| t.distance)
            .fold(f64::INFINITY, f64::min);
        assert!(o.metrics.c2 <= best + 1e-9, "{} vs {best}", o.metrics.c2);
    }
}

#[test]
fn structured_variant_selects_by_weighted_distance() {
    let (model, _) = support::trained_fixture();
    let config = quick(AttackKind::PercAlStructured, Mode::Untargeted, 0.0);
    for (x, y) in images(3) {
        let o = perc_al_structured(model, &x, Goal::untargeted(y), &config).unwrap();
        if !o.success {
            continue;
        }
        let sigma = texture_complexity(&x).unwrap();
        let w = weighted_c2(&x, &o.adversarial, &sigma).unwrap();
        let best = o
            .trace
            .iter()
            .filter(|t| t.adversarial)
            .map(|t| t.distance)
            .fold(f64::INFINITY, f64::min);
        assert!(w <= best + 1e-9);
    }
}

#[test]
fn zero_sigma_reduces_to_plain_perc_al() {
    let (model, _) = support::trained_fixture();
    let config = quick(AttackKind::PercAl, Mode::Targeted, 0.0);
    for (i, (x, y)) in images(2).into_iter().enumerate() {
        let g = goal(y, Mode::Targeted, i);
        let plain = perc_al(model, &x, g, &config).unwrap();
        let zero = TextureMap::zeros(16, 16);
        let reduced = perc_al_with_sigma(model, &x, g, &config, Some(&zero)).unwrap();
        assert_eq!(plain.adversarial, reduced.adversarial);
        let bits = |o: &perc_core::attacks::AttackOutcome| {
            o.trace.iter().map(|t| (t.step, t.adversarial, t.distance.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(bits(&plain), bits(&reduced));
    }
}

#[test]
fn perc_cw_is_cw_under_the_color_penalty() {
    let (model, _) = support::trained_fixture();
    let (x, y) = images(1).remove(0);
    let g = goal(y, Mode::Targeted, 0);
    let config = quick(AttackKind::PercCw, Mode::Targeted, 0.0);
    let a = run(AttackKind::PercCw, model, &x, g, &config).unwrap();
    let b = cw_with_distance(model, &x, g, &config, &ColorDistance::new(&x)).unwrap();
    assert_eq!(a.trace, b.trace);
}

#[test]
fn lambda_search_bisects_within_bracket() {
    let (model, _) = support::trained_fixture();
    for kind in [AttackKind::Cw, AttackKind::PercCw] {
        for mode in [Mode::Targeted, Mode::Untargeted] {
            let mut config = quick(kind, mode, 0.0);
            config.budget.search_steps = 5;
            config.budget.iterations = 30;
            for (i, (x, y)) in images(2).into_iter().enumerate() {
                let o = run(kind, model, &x, goal(y, mode, i), &config).unwrap();
                assert_eq!(o.searches.len(), 5);
                let (mut lo, mut hi) = (config.lambda_init / 1000.0, config.lambda_init * 1000.0);
                let mut lambda = config.lambda_init;
                for s in &o.searches {
                    assert_eq!(s.lambda, lambda);
                    assert!(lo <= lambda && lambda <= hi);
                    if s.success {
                        hi = lambda;
                    } else {
                        lo = lambda;
                    }
                    lambda = (lo * hi).sqrt();
                }
                assert_eq!(o.success, o.searches.iter().any(|s| s.success));
                for t in &o.trace {
                    assert!(t.search_step < 5);
                }
            }
        }
    }
}

#[test]
fn targeted_mode_needs_a_valid_target() {
    let (model, _) = support::trained_fixture();
    let (x, y) = images(1).remove(0);
    let config = quick(AttackKind::Ddn, Mode::Targeted, 0.0);
    assert!(matches!(ddn(model, &x, Goal::untargeted(y), &config), Err(Error::Config(_))));
    assert!(ddn(model, &x, Goal::targeted(y, y), &config).is_err());
    assert!(matches!(ddn(model, &x, Goal::targeted(y, 10), &config), Err(Error::InvalidLabel { .. })));
    let small = ImageTensor::filled(8, 8, [0.5; 3]).unwrap();
    assert!(ddn(model, &small, Goal::targeted(y, (y + 1) % 10), &config).is_err());
    let mut bad = config.clone();
    bad.kappa = -1.0;
    assert!(ddn(model, &x, Goal::targeted(y, (y + 1) % 10), &bad).is_err());
}

#[test]
fn non_finite_gradients_abort_with_iteration() {
    // finite but enormous weights overflow the logits to ±inf
    let arch = Architecture::small(16, 16, 10);
    let good = Model::init(arch.clone(), 1).unwrap();
    let params: Vec<Vec<f64>> = good.params().iter().map(|p| vec![1e200; p.len()]).collect();
    let model = Model::from_params(arch, params, 1).unwrap();
    let x = ImageTensor::filled(16, 16, [0.5; 3]).unwrap();
    for kind in [AttackKind::Ifgsm, AttackKind::Ddn, AttackKind::PercAl, AttackKind::Cw] {
        let config = quick(kind, Mode::Untargeted, 0.0);
        match run(kind, &model, &x, Goal::untargeted(0), &config) {
            Err(e @ Error::NonFiniteGradient { iteration, .. }) => {
                assert_eq!(iteration, 1, "{kind:?}");
                assert!(e.to_string().contains('1'));
            }
            other => panic!("{kind:?}: expected a non-finite gradient error, got {:?}", other.map(|o| o.success)),
        }
    }
}
