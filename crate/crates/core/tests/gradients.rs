mod common;

use common::{gradient_errors, ObjectiveInstance};
use frera_core::frera::{self, CritMask, ThresholdMode};
use frera_core::pipeline::{objective_step, StepViews};
use frera_core::spectral::TimeSeries;

#[test]
fn full_objective_matches_central_differences() {
    let inst = ObjectiveInstance::new(3, 4, 16, 2);
    let (enc, proj, s) = gradient_errors(&inst, 6, 1e-5);
    eprintln!("relative errors: encoder {enc:.2e}, projector {proj:.2e}, scores {s:.2e}");
    assert!(enc < 1e-3, "encoder {enc:e}");
    assert!(proj < 1e-3, "projector {proj:e}");
    assert!(s < 1e-3, "scores {s:e}");
}

#[test]
fn gradients_hold_without_regularizer() {
    let mut inst = ObjectiveInstance::new(8, 4, 12, 1);
    inst.lambda = 0.0;
    let (enc, proj, s) = gradient_errors(&inst, 4, 1e-5);
    assert!(enc.max(proj).max(s) < 1e-3, "{enc:e} {proj:e} {s:e}");
}

#[test]
fn distortion_path_carries_no_gradient() {
    let inst = ObjectiveInstance::new(5, 4, 16, 2);
    assert!(!inst.distortion.unimportant().is_empty());
    let anchors: Vec<&TimeSeries> = inst.anchors.iter().collect();
    // Masks with zero derivative leave only the distortion as a route to s.
    let frozen: Vec<CritMask> = inst.masks(&inst.scores).iter().map(|m| CritMask::fixed(m.weights().to_vec())).collect();
    let views = StepViews::Masked {
        masks: frozen,
        distortion: inst.distortion.clone(),
        trainable: true,
    };
    let mut m = inst.model.clone();
    let out = objective_step(&mut m, &anchors, &views, inst.tau, inst.lambda).unwrap();
    assert!(out.grad_scores.iter().all(|&g| g == 0.0), "{:?}", out.grad_scores);
}

#[test]
fn recomputing_distortion_changes_the_difference_quotient() {
    let inst = ObjectiveInstance::new(5, 4, 16, 2);
    let (_, analytic) = inst.analytic();
    let h = 1e-5;
    let j = inst.distortion.unimportant()[0];
    let with = |recompute: bool, delta: f64| {
        let mut s = inst.scores.clone();
        s.scores_mut()[j] += delta;
        let dist = if recompute {
            frera::compute_distortion(&s, ThresholdMode::Mean)
        } else {
            inst.distortion.clone()
        };
        assert_eq!(dist.unimportant(), inst.distortion.unimportant());
        inst.loss(&inst.model, &s, &dist)
    };
    let frozen = (with(false, h) - with(false, -h)) / (2.0 * h);
    let full = (with(true, h) - with(true, -h)) / (2.0 * h);
    let tol = 1e-3 * analytic[j].abs().max(1e-8);
    assert!((frozen - analytic[j]).abs() < tol, "{frozen} vs {}", analytic[j]);
    assert!((full - analytic[j]).abs() > 10.0 * tol, "{full} vs {}", analytic[j]);
}
