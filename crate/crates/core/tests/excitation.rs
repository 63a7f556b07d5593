use hypoldp::excitation::{
    build_ktau, certify_nondegenerate, directional_excitation, induction_bound, perturb, CertifyOptions,
    ExcitationSchedule,
};
use hypoldp::fixtures;
use hypoldp::linalg::random_unit;
use hypoldp::skeleton::{endpoint, CMPath, DEFAULT_SUBSTEPS};
use hypoldp::vectorfields::{estimate_constants, hormander_degree, HormanderCertificate, HormanderOptions, VectorFieldSystem};
use hypoldp::Projection;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn hypoelliptic() -> Vec<(&'static str, VectorFieldSystem, Vec<f64>)> {
    vec![
        ("heisenberg", fixtures::heisenberg(), vec![0.0; 3]),
        ("grushin", fixtures::grushin(), vec![0.0; 2]),
        ("engel", fixtures::engel(), vec![0.0; 3]),
    ]
}

fn certificate(sys: &VectorFieldSystem, x: &[f64]) -> HormanderCertificate {
    estimate_constants(sys, &hormander_degree(sys, x, HormanderOptions::default()).unwrap()).unwrap()
}

#[test]
fn schedule_shape() {
    let sys = fixtures::engel();
    let cert = certificate(&sys, &[0.0; 3]);
    let s = ExcitationSchedule::new(&cert, 2, 0.01).unwrap();
    assert_eq!(s.taus.len(), 2);
    assert_eq!(s.excursion_count(), 16);
    let tuples = s.tuples();
    assert_eq!(tuples.len(), 16);
    assert_eq!(tuples[0], vec![(0, 1.0), (0, 1.0)]);
    assert_eq!(tuples[1], vec![(0, 1.0), (0, -1.0)]);
    assert_eq!(tuples[2], vec![(0, 1.0), (1, 1.0)]);
    assert_eq!(tuples[15], vec![(1, -1.0), (1, -1.0)]);
    let expected_beta = 2.0 * (s.taus[0] + s.taus[1]) * 16.0;
    assert!((s.beta - expected_beta).abs() < 1e-15);
    let (k, _) = build_ktau(&cert, 2, 0.01).unwrap();
    assert!((k.horizon() - s.beta).abs() < 1e-12);
}

#[test]
fn oversized_tau_is_rejected() {
    let sys = fixtures::heisenberg();
    let cert = certificate(&sys, &[0.0; 3]);
    assert!(ExcitationSchedule::new(&cert, 2, 10.0).is_err());
    assert!(ExcitationSchedule::new(&cert, 2, 0.0).is_err());
}

#[test]
fn excitation_path_is_a_closed_loop_in_state_space() {
    for (name, sys, x) in hypoelliptic() {
        let cert = certificate(&sys, &x);
        let (k, _) = build_ktau(&cert, sys.d(), 0.01).unwrap();
        let end = endpoint(&sys, &x, &k, DEFAULT_SUBSTEPS).unwrap();
        let shift = end.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(shift < 1e-12, "{name}: {shift}");
        assert!(k.endpoint().iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn certificate_on_the_zero_control() {
    for (name, sys, x) in hypoelliptic() {
        let h = CMPath::zero(sys.d(), 1.0, 16);
        let c = certify_nondegenerate(&sys, &x, &h, None, CertifyOptions::default()).unwrap();
        assert!(c.before.min_eig < 1e-12, "{name}: before {}", c.before.min_eig);
        assert!(c.after.min_eig > c.floor, "{name}: after {} floor {}", c.after.min_eig, c.floor);
        assert!(c.endpoint_shift < 1e-8, "{name}: shift {}", c.endpoint_shift);
        assert!(c.schedule.is_some());
    }
}

#[test]
fn distance_shrinks_with_tau() {
    for (name, sys, x) in hypoelliptic() {
        let cert = certificate(&sys, &x);
        let h = CMPath::zero(sys.d(), 1.0, 16);
        let tau0 = 0.9 * 0.02f64.min(cert.constants().unwrap().horizon / (2.0 * cert.degree as f64));
        let mut last = f64::INFINITY;
        for k in 0..3 {
            let (ktau, _) = build_ktau(&cert, sys.d(), tau0 / f64::from(1 << k)).unwrap();
            let d = perturb(&h, &ktau).unwrap().distance(&h).unwrap();
            assert!(d > 0.0 && d < last, "{name}: {d} after {last}");
            last = d;
        }
    }
}

#[test]
fn nondegenerate_control_is_returned_unchanged() {
    let sys = fixtures::elliptic(2);
    let h = CMPath::straight_line(&[1.0, 2.0], 1.0, 4);
    let c = certify_nondegenerate(&sys, &[0.0, 0.0], &h, None, CertifyOptions::default()).unwrap();
    assert!(c.schedule.is_none());
    assert_eq!(c.h_beta, h);
    assert_eq!(c.attempts, 0);
}

#[test]
fn certificate_keeps_a_nonzero_endpoint() {
    let sys = fixtures::engel();
    let h = CMPath::straight_line(&[0.0, 1.0], 1.0, 8);
    let c = certify_nondegenerate(&sys, &[0.0; 3], &h, None, CertifyOptions::default()).unwrap();
    assert!(c.after.min_eig > c.floor);
    assert!(c.endpoint_shift < 1e-8, "{}", c.endpoint_shift);
}

#[test]
fn projected_certificate() {
    let sys = fixtures::heisenberg();
    let p = Projection::coordinates(3, &[2]).unwrap();
    let h = CMPath::zero(2, 1.0, 8);
    let c = certify_nondegenerate(&sys, &[0.0; 3], &h, Some(&p), CertifyOptions::default()).unwrap();
    assert!(c.before.projected_min_eig.unwrap() < 1e-12);
    assert!(c.after.projected_min_eig.unwrap() > c.floor);
}

#[test]
fn perturb_preserves_horizon_and_rejects_long_paths() {
    let h = CMPath::straight_line(&[1.0, 0.0], 1.0, 4);
    let k = CMPath::straight_line(&[0.0, 1.0], 0.25, 1).excursion();
    let p = perturb(&h, &k).unwrap();
    assert!((p.horizon() - 1.0).abs() < 1e-15);
    assert!((p.endpoint()[0] - 1.0).abs() < 1e-14);
    let long = CMPath::straight_line(&[0.0, 1.0], 0.6, 1).excursion();
    assert!(perturb(&h, &long).is_err());
}

#[test]
fn directional_bound_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, sys, x) in hypoelliptic() {
        let cert = certificate(&sys, &x);
        let tau = 0.9 * 0.02f64.min(cert.constants().unwrap().horizon / (2.0 * cert.degree as f64));
        for _ in 0..100 {
            let v = random_unit(&mut rng, sys.n());
            let dx = directional_excitation(&sys, &cert, v.as_slice(), tau, DEFAULT_SUBSTEPS).unwrap();
            assert!(dx.satisfied(), "{name}: {} < {}", dx.achieved, dx.bound);
            let s = ExcitationSchedule::new(&cert, sys.d(), tau).unwrap();
            assert_eq!(dx.bound, induction_bound(&s));
        }
    }
}
