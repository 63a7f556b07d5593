use approx::assert_abs_diff_eq;
use hypoldp::fixtures;
use hypoldp::skeleton::{
    covariance, endpoint, frechet_derivative, qw_path, solve_skeleton, solve_skeleton_from, CMPath, SkeletonError,
    DEFAULT_SUBSTEPS,
};
use hypoldp::vectorfields::VectorFieldSystem;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_fixtures() -> Vec<(&'static str, VectorFieldSystem)> {
    fixtures::NAMES.iter().map(|n| (*n, fixtures::by_name(n).unwrap())).collect()
}

fn random_path(rng: &mut ChaCha8Rng, d: usize, segments: usize, scale: f64) -> CMPath {
    let slopes = (0..segments).map(|_| (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).collect();
    CMPath::uniform(1.0, slopes).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn trapezoid(times: &[f64], f: &[f64]) -> f64 {
    times.windows(2).zip(f.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

#[test]
fn heisenberg_straight_line_has_no_area() {
    let h = CMPath::straight_line(&[0.7, -0.4], 1.0, 8);
    let x = endpoint(&fixtures::heisenberg(), &[0.0; 3], &h, DEFAULT_SUBSTEPS).unwrap();
    assert_abs_diff_eq!(x[0], 0.7, epsilon = 1e-14);
    assert_abs_diff_eq!(x[1], -0.4, epsilon = 1e-14);
    assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-14);
}

#[test]
fn heisenberg_polygon_encloses_its_area() {
    let k = 12;
    let r = 0.4;
    let slopes: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            let b = 2.0 * std::f64::consts::PI * (j + 1) as f64 / k as f64;
            vec![r * (b.cos() - a.cos()) * k as f64, r * (b.sin() - a.sin()) * k as f64]
        })
        .collect();
    let h = CMPath::uniform(1.0, slopes).unwrap();
    let x = endpoint(&fixtures::heisenberg(), &[0.0; 3], &h, 4).unwrap();
    let area = 0.5 * k as f64 * r * r * (2.0 * std::f64::consts::PI / k as f64).sin();
    assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-13);
    assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-13);
    assert_abs_diff_eq!(x[2], area, epsilon = 1e-12);
}

#[test]
fn grushin_line_endpoint() {
    let h = CMPath::straight_line(&[0.6, 0.5], 1.0, 1);
    let x = endpoint(&fixtures::grushin(), &[0.0, 0.0], &h, 1).unwrap();
    // x1 = 0.6 t, x2 = ∫ 0.6 t · 0.5 dt.
    assert_abs_diff_eq!(x[0], 0.6, epsilon = 1e-15);
    assert_abs_diff_eq!(x[1], 0.15, epsilon = 1e-15);
}

#[test]
fn round_trip_restores_initial_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, sys) in all_fixtures() {
        for _ in 0..5 {
            let x0 = random_point(&mut rng, sys.n());
            let h = random_path(&mut rng, sys.d(), 8, 1.0);
            let traj = solve_skeleton(&sys, &x0, &h.excursion(), DEFAULT_SUBSTEPS).unwrap();
            let id = DMatrix::identity(sys.n(), sys.n());
            let dx = (traj.endpoint() - DVector::from_column_slice(&x0)).amax();
            assert!(dx < 1e-8, "{name}: endpoint moved by {dx}");
            assert!((traj.final_jac() - &id).amax() < 1e-8, "{name}: J not restored");
            assert!((traj.final_kinv() - &id).amax() < 1e-8, "{name}: K not restored");
            assert!(traj.inverse_defect() < 1e-8, "{name}: defect {}", traj.inverse_defect());
        }
    }
}

#[test]
fn reparametrisation_keeps_the_endpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (name, sys) in all_fixtures() {
        let x0 = random_point(&mut rng, sys.n());
        let h = random_path(&mut rng, sys.d(), 8, 1.0);
        let a = endpoint(&sys, &x0, &h, DEFAULT_SUBSTEPS).unwrap();
        for c in [0.25, 3.0] {
            let b = endpoint(&sys, &x0, &h.time_scaled(c), DEFAULT_SUBSTEPS).unwrap();
            let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8, "{name}, c = {c}: {diff}");
        }
    }
}

#[test]
fn flow_property_of_concatenation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sys = fixtures::engel();
    let x0 = random_point(&mut rng, 3);
    let h1 = random_path(&mut rng, 2, 4, 1.0);
    let h2 = random_path(&mut rng, 2, 4, 1.0);
    let whole = solve_skeleton(&sys, &x0, &h1.concat(&h2), DEFAULT_SUBSTEPS).unwrap();
    let first = solve_skeleton(&sys, &x0, &h1, DEFAULT_SUBSTEPS).unwrap();
    let second = solve_skeleton_from(
        &sys,
        first.endpoint().as_slice(),
        first.final_jac(),
        first.final_kinv(),
        &h2,
        DEFAULT_SUBSTEPS,
    )
    .unwrap();
    assert!((whole.endpoint() - second.endpoint()).amax() < 1e-13);
    assert!((whole.final_jac() - second.final_jac()).amax() < 1e-12);
}

#[test]
fn frechet_derivative_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let delta = 1e-5;
    for (name, sys) in all_fixtures() {
        for _ in 0..10 {
            let x0 = random_point(&mut rng, sys.n());
            let h = random_path(&mut rng, sys.d(), 16, 1.0);
            let k = random_path(&mut rng, sys.d(), 16, 1.0);
            let traj = solve_skeleton(&sys, &x0, &h, DEFAULT_SUBSTEPS).unwrap();
            let d = frechet_derivative(&sys, &traj, &k).unwrap();
            let plus = endpoint(&sys, &x0, &h.add_scaled(&k, delta).unwrap(), DEFAULT_SUBSTEPS).unwrap();
            let minus = endpoint(&sys, &x0, &h.add_scaled(&k, -delta).unwrap(), DEFAULT_SUBSTEPS).unwrap();
            let fd = DVector::from_iterator(sys.n(), plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * delta)));
            let rel = (&d - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-5, "{name}: relative error {rel}");
        }
    }
}

#[test]
fn frechet_derivative_rejects_foreign_breakpoints() {
    let sys = fixtures::heisenberg();
    let h = CMPath::straight_line(&[1.0, 0.0], 1.0, 2);
    let traj = solve_skeleton(&sys, &[0.0; 3], &h, 1).unwrap();
    let k = CMPath::new(vec![0.0, 0.3, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(frechet_derivative(&sys, &traj, &k), Err(SkeletonError::GridMismatch(_))));
}

#[test]
fn covariance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (name, sys) in all_fixtures() {
        for _ in 0..20 {
            let x0 = random_point(&mut rng, sys.n());
            let h = random_path(&mut rng, sys.d(), 8, 1.0);
            let v = DVector::from_iterator(sys.n(), (0..sys.n()).map(|_| rng.random_range(-1.0..1.0)));
            let traj = solve_skeleton(&sys, &x0, &h, DEFAULT_SUBSTEPS).unwrap();
            let rep = covariance(&sys, &traj, None).unwrap();
            let vcv = (v.transpose() * &rep.c * &v)[0];
            let sum: f64 = sys
                .fields()
                .iter()
                .map(|f| {
                    let vals: Vec<f64> = qw_path(&traj, f).iter().map(|q| q.dot(&v).powi(2)).collect();
                    trapezoid(traj.times(), &vals)
                })
                .sum();
            assert!((vcv - sum).abs() <= 1e-9 * (1.0 + vcv.abs()), "{name}: {vcv} vs {sum}");
        }
    }
}

#[test]
fn covariance_at_the_zero_control() {
    // With h = 0 the covariance is Σ V_i(x) V_i(x)^T, degenerate for the
    // hypoelliptic fixtures.
    for (name, sys, n) in [("heisenberg", fixtures::heisenberg(), 3), ("grushin", fixtures::grushin(), 2), ("engel", fixtures::engel(), 3)] {
        let traj = solve_skeleton(&sys, &vec![0.0; n], &CMPath::zero(sys.d(), 1.0, 4), 4).unwrap();
        let rep = covariance(&sys, &traj, None).unwrap();
        assert!(rep.min_eig.abs() < 1e-12, "{name}: {}", rep.min_eig);
    }
    let sys = fixtures::elliptic(2);
    let traj = solve_skeleton(&sys, &[0.0, 0.0], &CMPath::zero(2, 1.0, 4), 4).unwrap();
    let rep = covariance(&sys, &traj, None).unwrap();
    assert!((rep.sigma - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
}

#[test]
fn projected_covariance_is_a_compression() {
    let sys = fixtures::heisenberg();
    let h = CMPath::straight_line(&[1.0, 0.5], 1.0, 4);
    let traj = solve_skeleton(&sys, &[0.0; 3], &h, DEFAULT_SUBSTEPS).unwrap();
    let p = hypoldp::Projection::coordinates(3, &[0, 1]).unwrap();
    let rep = covariance(&sys, &traj, Some(&p)).unwrap();
    let sp = rep.sigma_projected.as_ref().unwrap();
    assert!((sp - rep.sigma.view((0, 0), (2, 2))).amax() < 1e-15);
    assert!(rep.projected_min_eig.unwrap() >= rep.min_eig - 1e-15);
}

#[test]
fn dimension_errors() {
    let sys = fixtures::heisenberg();
    let h = CMPath::zero(2, 1.0, 2);
    assert!(matches!(
        solve_skeleton(&sys, &[0.0, 0.0], &h, 1),
        Err(SkeletonError::DimensionMismatch { expected: 3, got: 2 })
    ));
    let bad = CMPath::zero(3, 1.0, 2);
    assert!(solve_skeleton(&sys, &[0.0; 3], &bad, 1).is_err());
}

proptest! {
    #[test]
    fn concatenation_adds_energy(a in prop::collection::vec(-2.0f64..2.0, 1..6), b in prop::collection::vec(-2.0f64..2.0, 1..6)) {
        let ha = CMPath::uniform(1.0, a.iter().map(|x| vec![*x, 1.0 - x]).collect()).unwrap();
        let hb = CMPath::uniform(0.5, b.iter().map(|x| vec![-x, *x]).collect()).unwrap();
        let e = ha.concat(&hb).energy();
        prop_assert!((e - ha.energy() - hb.energy()).abs() < 1e-12 * (1.0 + e));
    }

    #[test]
    fn excursion_returns_to_zero(a in prop::collection::vec(-2.0f64..2.0, 1..6)) {
        let h = CMPath::uniform(1.0, a.iter().map(|x| vec![*x, x * x]).collect()).unwrap();
        let end = h.excursion().endpoint();
        prop_assert!(end.iter().all(|v| v.abs() < 1e-12));
        prop_assert!((h.excursion().energy() - 2.0 * h.energy()).abs() < 1e-12 * (1.0 + h.energy()));
    }

    #[test]
    fn time_scaling_divides_energy(a in prop::collection::vec(-2.0f64..2.0, 1..6), c in 0.1f64..5.0) {
        let h = CMPath::uniform(1.0, a.iter().map(|x| vec![*x]).collect()).unwrap();
        let s = h.time_scaled(c);
        prop_assert!((s.energy() * c - h.energy()).abs() < 1e-12 * (1.0 + h.energy()));
        prop_assert!((s.endpoint()[0] - h.endpoint()[0]).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip(a in prop::collection::vec(-2.0f64..2.0, 1..6)) {
        let h = CMPath::uniform(2.0, a.iter().map(|x| vec![*x, -x]).collect()).unwrap();
        let back: CMPath = serde_json::from_str(&h.to_json_string()).unwrap();
        prop_assert_eq!(back, h);
    }
}
