use approx::assert_relative_eq;
use hypoldp::fixtures;
use hypoldp::ratefn::{
    minimize_energy, rate_hat, rate_i1, rate_i2, rate_i2_prime, EndpointConstraint, OptimizerOptions, StartKind,
    TargetPath,
};
use hypoldp::skeleton::endpoint;
use hypoldp::vectorfields::HormanderOptions;
use hypoldp::Projection;
use std::f64::consts::PI;

fn quick() -> OptimizerOptions {
    OptimizerOptions { segments: 32, random_restarts: 4, excitation_restarts: 2, ..Default::default() }
}

#[test]
fn elliptic_energy_is_half_the_squared_distance() {
    let sys = fixtures::elliptic(2);
    let c = EndpointConstraint::point(vec![0.5, -1.0], vec![1.5, 1.0]).unwrap();
    let r = minimize_energy(&sys, &c, &quick()).unwrap();
    assert!(r.converged);
    assert!((r.energy - 2.5).abs() < 1e-6, "{}", r.energy);
    for s in r.h_star.slopes() {
        assert!((s[0] - 1.0).abs() < 1e-4 && (s[1] - 2.0).abs() < 1e-4, "{s:?}");
    }
}

#[test]
fn heisenberg_horizontal_target() {
    let sys = fixtures::heisenberg();
    let c = EndpointConstraint::point(vec![0.0; 3], vec![1.0, 0.0, 0.0]).unwrap();
    let r = minimize_energy(&sys, &c, &quick()).unwrap();
    assert!(r.converged);
    assert!((r.energy - 0.5).abs() < 1e-4, "{}", r.energy);
}

#[test]
fn heisenberg_vertical_target_is_a_circle() {
    let sys = fixtures::heisenberg();
    let c = EndpointConstraint::point(vec![0.0; 3], vec![0.0, 0.0, 0.25]).unwrap();
    let opts = OptimizerOptions { segments: 64, random_restarts: 8, ..Default::default() };
    let r = minimize_energy(&sys, &c, &opts).unwrap();
    assert!(r.converged);
    // A loop enclosing area z has length at least sqrt(4 pi z).
    assert_relative_eq!(r.energy, PI / 2.0, max_relative = 0.02);
    assert!(r.energy >= PI / 2.0 * (1.0 - 1e-3));
    let end = endpoint(&sys, &c.start, &r.h_star, opts.substeps).unwrap();
    assert!(c.residual(&end).iter().all(|v| v.abs() < 1e-6));
    assert!(r.min_eig > 0.0);
}

#[test]
fn projected_constraint_is_cheaper_than_any_point() {
    let sys = fixtures::heisenberg();
    let p = Projection::coordinates(3, &[0]).unwrap();
    let c = EndpointConstraint::projected(vec![0.0; 3], p, vec![1.0]).unwrap();
    let r = minimize_energy(&sys, &c, &quick()).unwrap();
    assert!(r.converged);
    assert!((r.energy - 0.5).abs() < 1e-4, "{}", r.energy);
    assert!(r.projected_min_eig.unwrap() > 0.0);
}

#[test]
fn candidates_record_both_start_kinds() {
    let sys = fixtures::heisenberg();
    let c = EndpointConstraint::point(vec![0.0; 3], vec![0.3, 0.2, 0.1]).unwrap();
    let r = minimize_energy(&sys, &c, &quick()).unwrap();
    assert_eq!(r.restarts_used, r.candidates.len());
    assert!(r.candidates.iter().any(|c| c.start == StartKind::Random));
    assert!(r.candidates.iter().any(|c| c.start == StartKind::Excitation));
    let best = r.candidates.iter().filter(|c| c.converged).map(|c| c.energy).fold(f64::INFINITY, f64::min);
    assert_eq!(r.energy, best);
}

#[test]
fn strong_condition_failure_gives_infinity() {
    let sys = fixtures::counterexample();
    let c = EndpointConstraint::point(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap();
    let v = rate_i1(&sys, &c, &quick(), HormanderOptions::default()).unwrap();
    assert!(v.value.is_infinite());
    assert!(v.reason.is_some());
}

#[test]
fn rate_hat_shifts_by_the_minimum() {
    let v = rate_hat(&[3.0, 1.0, f64::INFINITY, 2.0]);
    assert_eq!(v[..2], [2.0, 0.0]);
    assert!(v[2].is_infinite());
    assert_eq!(v[3], 1.0);
}

#[test]
fn i2_on_the_elliptic_fixture_is_the_path_energy() {
    let sys = fixtures::elliptic(2);
    let c = EndpointConstraint::point(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
    let k = 32;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let values: Vec<Vec<f64>> = times.iter().map(|t| vec![t * t, 2.0 * t]).collect();
    let b = TargetPath::new(times, values).unwrap();
    let opts = OptimizerOptions { segments: k, random_restarts: 2, excitation_restarts: 0, ..Default::default() };
    let v = rate_i2(&sys, &sys, &c, &[0.0, 0.0], &b, 1e-4, &opts).unwrap();
    // The piecewise-linear interpolant of (t², 2t) through the grid.
    let kf = k as f64;
    let expected = 0.5 * (4.0 / 3.0 - 1.0 / (3.0 * kf * kf) + 4.0);
    assert_relative_eq!(v.value, expected, max_relative = 1e-3);

    let line = TargetPath::new(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap();
    let shifted = rate_i2_prime(&sys, &c, &line, 1e-4, &opts).unwrap();
    assert!(shifted.value < 1e-4, "{}", shifted.value);

    let off = TargetPath::new(vec![0.0, 1.0], vec![vec![0.5, 0.0], vec![1.0, 2.0]]).unwrap();
    assert!(rate_i2(&sys, &sys, &c, &[0.0, 0.0], &off, 1e-4, &opts).unwrap().value.is_infinite());
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(EndpointConstraint::point(vec![0.0; 2], vec![0.0; 3]).is_err());
    let p = Projection::coordinates(3, &[0]).unwrap();
    assert!(EndpointConstraint::projected(vec![0.0; 2], p, vec![1.0]).is_err());
    let c = EndpointConstraint::point(vec![0.0; 2], vec![1.0; 2]).unwrap();
    let bad = OptimizerOptions { segments: 0, ..Default::default() };
    assert!(minimize_energy(&fixtures::elliptic(2), &c, &bad).is_err());
    assert!(TargetPath::new(vec![0.0, 0.0], vec![vec![0.0], vec![1.0]]).is_err());
}

#[test]
fn result_does_not_depend_on_worker_count() {
    let sys = fixtures::grushin();
    let c = EndpointConstraint::point(vec![0.0, 0.0], vec![0.5, 0.3]).unwrap();
    let runs: Vec<_> = [1, 2, 4]
        .iter()
        .map(|&t| minimize_energy(&sys, &c, &OptimizerOptions { threads: Some(t), ..quick() }).unwrap())
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.energy.to_bits(), runs[0].energy.to_bits());
        assert_eq!(r.h_star, runs[0].h_star);
    }
}
