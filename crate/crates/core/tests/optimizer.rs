mod common;

use common::fixture;
use softmix::*;

fn short(iterations: usize) -> OptimConfig {
    OptimConfig {
        iterations,
        ..OptimConfig::person_like()
    }
}

#[test]
fn runs_are_bit_deterministic() {
    let f = fixture();
    let run = || optimize_lambda(&f.world, &f.schedule, Source::noise(100, 8), &f.c0, &f.c1, &short(12)).unwrap();
    let (a, b) = (run(), run());
    assert!(a.same_outcome(&b));
    assert_eq!(a.lambda_star, b.lambda_star);
}

#[test]
fn returns_best_iterate_and_full_trace() {
    let f = fixture();
    let r = optimize_lambda(&f.world, &f.schedule, Source::noise(101, 8), &f.c0, &f.c1, &short(20)).unwrap();
    assert_eq!(r.loss_trace.len(), 21);
    assert_eq!(r.loss_trace[0], r.initial_report);
    let min = r.loss_trace.iter().map(|l| l.total).fold(f64::INFINITY, f64::min);
    assert_eq!(r.final_report.total, min);
    assert_eq!(r.loss_trace[r.best_iteration], r.final_report);
    assert_eq!(r.lambda_star.steps(), 50);
}

#[test]
fn self_transfer_reproduces_final_report() {
    let f = fixture();
    let cfg = short(8);
    let r = optimize_lambda(&f.world, &f.schedule, Source::noise(102, 8), &f.c0, &f.c1, &cfg).unwrap();
    let (_, report) = transfer(&f.world, &f.schedule, &r.lambda_star, Source::noise(102, 8), &f.c0, &f.c1, cfg.beta).unwrap();
    assert_eq!(report, r.final_report);
}

#[test]
fn editing_mode_keeps_corrections_fixed() {
    let f = fixture();
    let track = invert(&f.world, &f.schedule, &f.source, &f.c0).unwrap();
    let before = track.clone();
    let objective = PipelineObjective::new(&f.world, &f.schedule, Source::Editing { track: &track }, &f.c0, &f.c1, 0.05).unwrap();
    // neutral output of the editing pipeline is the reconstructed source
    assert!((objective.neutral() - &f.source).amax() <= 1e-6);
    let r = optimize_lambda(&f.world, &f.schedule, Source::Editing { track: &track }, &f.c0, &f.c1, &short(10)).unwrap();
    assert!(r.final_report.total <= r.initial_report.total);
    assert_eq!(track, before);
}

#[test]
fn scene_like_starts_from_extrapolated_init() {
    let f = fixture();
    let cfg = OptimConfig { iterations: 0, ..OptimConfig::scene_like() };
    let r = optimize_lambda(&f.world, &f.schedule, Source::noise(103, 8), &f.c0, &f.c1, &cfg).unwrap();
    assert_eq!(r.lambda_star, InitScheme::SceneLike.init(50).unwrap());
    assert_eq!(r.loss_trace.len(), 1);
    assert_eq!(r.final_report.beta, 0.03);
}
