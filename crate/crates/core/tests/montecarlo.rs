use hypoldp::fixtures;
use hypoldp::montecarlo::{
    batch_mean, conditioned_paths, counterexample_exact, estimate_density, ldp_verify, simulate_endpoints,
    simulate_path, Bandwidth, Endpoints, MonteCarloError, SimConfig,
};
use hypoldp::ratefn::{minimize_energy, EndpointConstraint, OptimizerOptions};
use hypoldp::skeleton::solve_skeleton;
use hypoldp::vectorfields::{VectorField, VectorFieldSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

fn within(value: f64, expected: f64, se: f64, k: f64) -> bool {
    (value - expected).abs() <= k * se
}

#[test]
fn counterexample_endpoint_moments() {
    let sys = fixtures::counterexample();
    let cfg = SimConfig::new(vec![1.0], 40_000, 6, 3);
    let ends = simulate_endpoints(&sys, &[0.0, 0.0], 1.0, &cfg).unwrap();
    let exact = counterexample_exact(1.0, 0.0).unwrap().covariance;
    let mean = ends.mean();
    for (m, se) in &mean {
        assert!(within(*m, 0.0, *se, 4.0), "mean {m} se {se}");
    }
    for (a, b) in [(0, 0), (0, 1), (1, 1)] {
        let (c, se) = ends.covariance(a, b);
        assert!(within(c, exact[a][b], se, 4.0), "cov({a},{b}) = {c}, expected {}, se {se}", exact[a][b]);
    }
}

#[test]
fn counterexample_scaling_under_common_random_numbers() {
    let sys = fixtures::counterexample();
    let cfg = SimConfig::new(vec![1.0, 0.5], 200, 5, 8);
    let a = simulate_endpoints(&sys, &[0.0, 0.0], 1.0, &cfg).unwrap();
    let b = simulate_endpoints(&sys, &[0.0, 0.0], 0.5, &cfg).unwrap();
    for (p, q) in a.rows().zip(b.rows()) {
        assert!((q[0] - 0.5 * p[0]).abs() <= 1e-12 * p[0].abs().max(1.0));
        assert!((q[1] - p[1] / 8.0).abs() <= 1e-12 * p[1].abs().max(1.0));
    }
}

#[test]
fn heisenberg_area_variance_tracks_the_polygon() {
    // The polygonal Lévy area over N increments has variance (1 − 1/N)/4.
    let sys = fixtures::heisenberg();
    for level in [3u32, 6] {
        let cfg = SimConfig::new(vec![1.0], 40_000, level, 21);
        let ends = simulate_endpoints(&sys, &[0.0; 3], 1.0, &cfg).unwrap();
        let sq: Vec<f64> = ends.rows().map(|r| r[2] * r[2]).collect();
        let (m, se) = batch_mean(&sq);
        let expected = 0.25 * (1.0 - 1.0 / f64::from(1u32 << level));
        assert!(within(m, expected, se, 4.0), "level {level}: {m} vs {expected} (se {se})");
        let (mx3, sex3) = ends.mean()[2];
        assert!(within(mx3, 0.0, sex3, 4.0));
    }
}

fn normal_rows(n: usize, seed: u64) -> Endpoints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    Endpoints::from_rows(2, &rows).unwrap()
}

#[test]
fn kde_on_standard_normals() {
    let n = 20_000;
    let est = estimate_density(&normal_rows(n, 5), &[0.0, 0.0], None, Bandwidth::Scott, 1.0).unwrap();
    let h2 = (n as f64).powf(-1.0 / 3.0);
    // Smoothing with bandwidth h turns N(0, I) into N(0, (1 + h²) I).
    let smoothed = 1.0 / (2.0 * PI * (1.0 + h2));
    assert!(within(est.p_hat, smoothed, est.stderr, 4.0), "{} vs {smoothed} (se {})", est.p_hat, est.stderr);
    assert!((est.p_hat * 2.0 * PI - 1.0).abs() < 0.06);
    assert!(est.n_effective > 1.0 && est.n_effective < n as f64);
}

#[test]
fn kde_error_shrinks_with_sample_size() {
    let small = estimate_density(&normal_rows(10_000, 6), &[0.5, 0.0], None, Bandwidth::Scott, 1.0).unwrap();
    let large = estimate_density(&normal_rows(100_000, 7), &[0.5, 0.0], None, Bandwidth::Scott, 1.0).unwrap();
    assert!(large.stderr / small.stderr < 0.6, "{} / {}", large.stderr, small.stderr);
}

#[test]
fn kde_rejects_small_or_degenerate_samples() {
    let few = normal_rows(100, 1);
    assert!(matches!(
        estimate_density(&few, &[0.0, 0.0], None, Bandwidth::Scott, 1.0),
        Err(MonteCarloError::TooFewSamples { .. })
    ));
    let flat = Endpoints::from_rows(2, &vec![vec![1.0, 1.0]; 2000]).unwrap();
    assert!(matches!(
        estimate_density(&flat, &[0.0, 0.0], None, Bandwidth::Silverman, 1.0),
        Err(MonteCarloError::DegenerateSpread)
    ));
    assert!(estimate_density(&normal_rows(2000, 2), &[0.0], None, Bandwidth::Scott, 1.0).is_err());
}

#[test]
fn blowup_guard_drops_paths() {
    let cubic = VectorField::from_terms(1, vec![(vec![3u32], vec![1.0])]).unwrap();
    let sys = VectorFieldSystem::new(vec![VectorField::constant(&[1.0])], cubic).unwrap();
    let cfg = SimConfig::new(vec![1.0], 50, 6, 0);
    let ends = simulate_endpoints(&sys, &[3.0], 1.0, &cfg).unwrap();
    assert_eq!(ends.blowups().len() + ends.len(), 50);
    assert!(!ends.blowups().is_empty());
    assert!(ends.rows().all(|r| r[0].abs() <= 1e6));
}

#[test]
fn path_records_match_endpoints() {
    let sys = fixtures::grushin();
    let cfg = SimConfig::new(vec![0.5], 32, 5, 4);
    let ends = simulate_endpoints(&sys, &[1.0, 0.0], 0.5, &cfg).unwrap();
    for i in [0usize, 7, 31] {
        let rec = simulate_path(&sys, &[1.0, 0.0], 0.5, &cfg, i).unwrap();
        assert_eq!(rec.driver.len(), 33);
        assert_eq!(rec.states.len(), 33);
        assert_eq!(rec.states.last().unwrap().as_slice(), ends.get(i));
    }
}

#[test]
fn huge_radius_accepts_every_path() {
    let sys = fixtures::heisenberg();
    let c = EndpointConstraint::point(vec![0.0; 3], vec![0.0; 3]).unwrap();
    let cfg = SimConfig::new(vec![1.0], 64, 3, 2);
    let s = conditioned_paths(&sys, &c, 1.0, 1e9, &cfg).unwrap();
    assert_eq!(s.acceptance_rate, 1.0);
    assert_eq!(s.accepted.len(), 64);
    assert!(matches!(conditioned_paths(&sys, &c, 1.0, 1e-12, &cfg), Err(MonteCarloError::NoAcceptance { .. })));
}

#[test]
fn pinned_brownian_midpoint() {
    let sys = fixtures::elliptic(1);
    let cfg = SimConfig::new(vec![1.0], 40_000, 4, 17);
    for target in [0.0, 1.0] {
        let c = EndpointConstraint::point(vec![0.0], vec![target]).unwrap();
        let s = conditioned_paths(&sys, &c, 1.0, 0.05, &cfg).unwrap();
        assert!(s.accepted.len() > 500, "{}", s.accepted.len());
        let mids: Vec<f64> = s.accepted.iter().map(|p| p.record.states[8][0]).collect();
        let (m, se) = batch_mean(&mids);
        assert!(within(m, target / 2.0, se, 3.0), "midpoint mean {m} (se {se})");
        let sq: Vec<f64> = mids.iter().map(|x| (x - target / 2.0).powi(2)).collect();
        let (v, se) = batch_mean(&sq);
        assert!(within(v, 0.25, se, 4.0), "midpoint variance {v} (se {se})");
    }
}

#[test]
fn heisenberg_pinned_paths_concentrate_on_the_geodesic() {
    let sys = fixtures::heisenberg();
    let c = EndpointConstraint::point(vec![0.0; 3], vec![1.0, 0.0, 0.0]).unwrap();
    let opts = OptimizerOptions { segments: 32, random_restarts: 2, excitation_restarts: 0, ..Default::default() };
    let rate = minimize_energy(&sys, &c, &opts).unwrap();
    let traj = solve_skeleton(&sys, &c.start, &rate.h_star, 1).unwrap();
    let level = 5u32;
    let steps = 1usize << level;
    // With one substep the skeleton grid is the dyadic grid of the simulation.
    assert_eq!(traj.times().len(), steps + 1);
    let cfg = SimConfig::new(vec![0.5, 0.35, 0.25], 200_000, level, 5);
    let sups: Vec<f64> = cfg
        .epsilons
        .iter()
        .map(|&eps| {
            let s = conditioned_paths(&sys, &c, eps, 0.2, &cfg).unwrap();
            assert!(s.accepted.len() >= 10, "eps {eps}: {} accepted", s.accepted.len());
            let total: f64 = s
                .accepted
                .iter()
                .map(|p| {
                    p.record
                        .states
                        .iter()
                        .zip(traj.phi())
                        .map(|(x, phi)| x.iter().zip(phi.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                        .fold(0.0, f64::max)
                })
                .sum();
            total / s.accepted.len() as f64
        })
        .collect();
    assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
}

#[test]
fn wong_zakai_is_exact_for_the_linear_counterexample() {
    let sys = fixtures::counterexample();
    let eps = 0.8;
    let cfg = SimConfig::new(vec![eps], 16, 6, 13);
    for i in 0..16 {
        let rec = simulate_path(&sys, &[0.0, 0.0], eps, &cfg, i).unwrap();
        let dt = 1.0 / 64.0;
        // X² = ε³ ∫ w, and ∫ of the polygon is the trapezoidal sum.
        let integral: f64 = rec.driver.windows(2).map(|w| 0.5 * dt * (w[0][0] + w[1][0])).sum();
        let end = rec.states.last().unwrap();
        assert!((end[0] - eps * rec.driver[64][0]).abs() <= 1e-10);
        assert!((end[1] - eps.powi(3) * integral).abs() <= 1e-10);
    }
}

#[test]
fn doubling_the_level_moves_the_covariance_within_noise() {
    let sys = fixtures::counterexample();
    let covs: Vec<Vec<(f64, f64)>> = [4u32, 8]
        .iter()
        .map(|&k| {
            let cfg = SimConfig::new(vec![1.0], 40_000, k, 100 + u64::from(k));
            let ends = simulate_endpoints(&sys, &[0.0, 0.0], 1.0, &cfg).unwrap();
            [(0, 0), (0, 1), (1, 1)].iter().map(|&(a, b)| ends.covariance(a, b)).collect()
        })
        .collect();
    for (a, b) in covs[0].iter().zip(&covs[1]) {
        let se = (a.1 * a.1 + b.1 * b.1).sqrt();
        assert!(within(a.0, b.0, se, 3.0), "{a:?} vs {b:?}");
    }
}

#[test]
fn kde_refinement_approaches_the_closed_form() {
    let sys = fixtures::counterexample();
    let exact = counterexample_exact(1.0, 0.0).unwrap().p;
    let errors: Vec<f64> = [(2_000usize, 0.8), (8_000, 0.4), (32_000, 0.2)]
        .iter()
        .map(|&(n, factor)| {
            let cfg = SimConfig::new(vec![1.0], n, 6, 77);
            let ends = simulate_endpoints(&sys, &[0.0, 0.0], 1.0, &cfg).unwrap();
            let est = estimate_density(&ends, &[0.0, 0.0], None, Bandwidth::Whitened { factor }, 1.0).unwrap();
            (est.p_hat - exact).abs()
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] / w[0] < 0.6, "{errors:?}");
    }
}

#[test]
fn heisenberg_scaling_law() {
    // X^ε equals the dilation of X¹ (ε on x1, x2 and ε² on x3) path by path
    // under common random numbers, hence in distribution.
    let sys = fixtures::heisenberg();
    let eps = 0.3;
    let cfg = SimConfig::new(vec![1.0, eps], 20_000, 5, 31);
    let one = simulate_endpoints(&sys, &[0.0; 3], 1.0, &cfg).unwrap();
    let small = simulate_endpoints(&sys, &[0.0; 3], eps, &cfg).unwrap();
    let scale = [eps, eps, eps * eps];
    for (p, q) in one.rows().zip(small.rows()) {
        for c in 0..3 {
            assert!((q[c] - scale[c] * p[c]).abs() <= 1e-12 * (1.0 + p[c].abs()));
        }
    }
    for (c, s) in scale.iter().enumerate() {
        let (m, se) = small.mean()[c];
        assert!(within(m, s * one.mean()[c].0, se, 3.0));
        let (v, se) = small.covariance(c, c);
        assert!(within(v, s * s * one.covariance(c, c).0, se, 3.0));
    }
}

#[test]
fn no_blowups_on_the_fixtures() {
    for name in fixtures::NAMES {
        let sys = fixtures::by_name(name).unwrap();
        let cfg = SimConfig::new(vec![1.0], 2000, 6, 3);
        let ends = simulate_endpoints(&sys, &vec![0.0; sys.n()], 1.0, &cfg).unwrap();
        assert!(ends.blowups().is_empty(), "{name}: {}", ends.blowups().len());
    }
}

#[test]
fn counterexample_log_density_diverges_downward() {
    let sys = fixtures::counterexample();
    let c = EndpointConstraint::point(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap();
    let cfg = SimConfig::new(vec![1.0, 0.7, 0.5, 0.35], 20_000, 6, 8);
    let mut last = f64::INFINITY;
    for &eps in &cfg.epsilons {
        let ends = simulate_endpoints(&sys, &[0.0, 0.0], eps, &cfg).unwrap();
        let est = estimate_density(&ends, c.target(), None, Bandwidth::Scott, eps).unwrap();
        let value = eps * eps * est.p_hat.ln();
        assert!(value < last || value == f64::NEG_INFINITY, "eps {eps}: {value} after {last}");
        last = value;
        if eps == 1.0 {
            let exact = counterexample_exact(1.0, 1.0).unwrap().p;
            assert!(within(est.p_hat, exact, est.stderr, 3.0), "{} vs {exact} (se {})", est.p_hat, est.stderr);
        }
    }
}

#[test]
fn heisenberg_concentrates_as_noise_shrinks() {
    let sys = fixtures::heisenberg();
    let cfg = SimConfig::new(vec![1.0, 0.5, 0.25], 2000, 5, 1);
    let spreads: Vec<f64> = cfg
        .epsilons
        .iter()
        .map(|&e| {
            let ends = simulate_endpoints(&sys, &[0.0; 3], e, &cfg).unwrap();
            ends.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / ends.len() as f64
        })
        .collect();
    assert!(spreads.windows(2).all(|w| w[1] < w[0]), "{spreads:?}");
}

#[test]
fn ldp_report_on_the_elliptic_fixture() {
    let sys = fixtures::elliptic(2);
    let c = EndpointConstraint::point(vec![0.0, 0.0], vec![0.6, 0.8]).unwrap();
    let opts = OptimizerOptions { segments: 16, random_restarts: 2, excitation_restarts: 0, ..Default::default() };
    let rate = minimize_energy(&sys, &c, &opts).unwrap();
    assert!((rate.energy - 0.5).abs() < 1e-6);
    let cfg = SimConfig::new(vec![1.0, 0.7], 5000, 4, 9);
    let report = ldp_verify(&sys, &c, &cfg, &rate, true).unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        // ε² log p = −|x|²/2 − ε² log(2π ε²) for Brownian motion.
        let e2 = row.epsilon * row.epsilon;
        let exact = -0.5 - e2 * (2.0 * PI * e2).ln();
        assert!((row.eps2_log_p - exact).abs() < 0.05, "{} vs {exact}", row.eps2_log_p);
        assert!(row.gap.is_finite());
        let ball = row.ball.as_ref().unwrap();
        assert!(ball.fraction >= 0.0 && ball.fraction <= 1.0);
        assert!(ball.examined <= ball.accepted);
    }
    assert!(report.to_csv().starts_with("epsilon,p_hat,stderr,eps2_log_p,minus_rate,gap\n"));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let sys = fixtures::engel();
    let runs: Vec<(String, u64)> = [1usize, 2, 4]
        .iter()
        .map(|&t| {
            let cfg = SimConfig { threads: Some(t), ..SimConfig::new(vec![0.5], 3000, 5, 11) };
            let ends = simulate_endpoints(&sys, &[0.0; 3], 0.5, &cfg).unwrap();
            let est = estimate_density(&ends, &[0.0; 3], None, Bandwidth::Scott, 0.5).unwrap();
            (ends.to_csv(), est.p_hat.to_bits())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}
