mod common;

use common::{random_catalog, rel_err};
use etas_core::linearization::{
    approx_log_likelihood, build_surrogate, predictor_part1, predictor_part2, predictor_part3, time_bins, Part,
    Predictor,
};
use etas_core::model::{conditional_intensity, exact_log_likelihood, magnitude_factor, omori_integral};
use etas_core::simulator::{simulate, SimConfig};
use etas_core::{BinningConfig, EtasParams, EtasPriors, Event, EventCatalog, InternalTheta, ObservationWindow, PriorSpec, TiePolicy};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_theta(rng: &mut ChaCha8Rng, spread: f64) -> InternalTheta {
    InternalTheta::from_fn(|_, _| rng.random_range(-spread..spread))
}

fn clustered_catalog(seed: u64) -> EventCatalog {
    let params = EtasParams::new(0.5, 1.0, 1.0, 0.05, 1.3).unwrap();
    let w = ObservationWindow::new(0.0, 100.0, 3.0).unwrap();
    simulate(&SimConfig::new(params, w, std::f64::consts::LN_10, seed)).unwrap()
}

fn prior_sets() -> [EtasPriors; 2] {
    [EtasPriors::gamma(), EtasPriors::replicate()]
}

/// Central difference of a predictor's value in each internal coordinate.
fn fd_gradient(f: impl Fn(&InternalTheta) -> Predictor, theta: &InternalTheta) -> [f64; 5] {
    let h = 1e-6;
    std::array::from_fn(|j| {
        let mut up = *theta;
        let mut dn = *theta;
        up[j] += h;
        dn[j] -= h;
        (f(&up).value - f(&dn).value) / (2.0 * h)
    })
}

fn check_gradient(what: &str, f: impl Fn(&InternalTheta) -> Predictor, theta: &InternalTheta) {
    let p = f(theta);
    if !p.value.is_finite() {
        return;
    }
    let fd = fd_gradient(&f, theta);
    for j in 0..5 {
        let g = p.gradient[j];
        // rounding of the value divided by the step sets a floor on what a
        // central difference can resolve
        let floor = 1e-9 * p.value.abs().max(1.0);
        assert!(
            (g - fd[j]).abs() <= 1e-5 * g.abs() + floor,
            "{what} coord {j} at {theta:?}: analytic {g} vs fd {}",
            fd[j]
        );
    }
}

#[test]
fn bins_examples() {
    let cfg = |n| BinningConfig::new(0.1, 2.0, n).unwrap();
    let w = |t| ObservationWindow::new(0.0, t, 3.0).unwrap();
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    assert!(close(&time_bins(0.0, &w(100.0), &cfg(3)), &[0.0, 0.1, 0.3, 0.9, 2.7, 100.0]));
    assert!(close(&time_bins(0.0, &w(0.5), &cfg(10)), &[0.0, 0.1, 0.3, 0.5]));
    assert!(close(&time_bins(99.99, &w(100.0), &cfg(10)), &[99.99, 100.0]));
}

#[test]
fn surrogate_row_count_formula() {
    // every event far enough from T2 gets the full B = n_max + 2 bins
    let cfg = BinningConfig::new(0.1, 2.0, 3).unwrap();
    let w = ObservationWindow::new(0.0, 1000.0, 3.0).unwrap();
    let events: Vec<Event> = (0..40).map(|i| Event { time: 10.0 * i as f64, magnitude: 3.5 }).collect();
    let cat = EventCatalog::new(events, w, TiePolicy::Reject).unwrap();
    let s = build_surrogate(&cat, &cfg).unwrap();
    let b = 5;
    assert_eq!(s.len(), 40 * (b + 1) + 1);
    for r in s.rows() {
        let expected = match r.part {
            Part::Background | Part::Triggered => (0, 1),
            Part::Intensity => (1, 0),
        };
        assert_eq!((r.count, r.exposure), expected);
    }
    assert_eq!(s.rows().iter().filter(|r| r.part == Part::Background).count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bins_partition_the_triggered_mass(
        t_h in 0.0f64..99.0, delta in 1e-3f64..5.0, growth in 0.1f64..5.0, n_max in 0u32..15,
        c in 1e-3f64..2.0, p in 0.8f64..3.0,
    ) {
        let w = ObservationWindow::new(0.0, 100.0, 3.0).unwrap();
        let cfg = BinningConfig::new(delta, growth, n_max).unwrap();
        let bins = time_bins(t_h, &w, &cfg);
        prop_assert!(bins.windows(2).all(|b| b[1] > b[0]));
        prop_assert_eq!(bins[0], t_h);
        prop_assert_eq!(*bins.last().unwrap(), 100.0);
        let parts: f64 = bins.windows(2).map(|b| omori_integral(b[0], b[1], t_h, c, p).unwrap()).sum();
        let whole = omori_integral(t_h, 100.0, t_h, c, p).unwrap();
        prop_assert!(rel_err(parts, whole) < 1e-12);
    }
}

#[test]
fn predictor_values_match_model() {
    let cat = clustered_catalog(1);
    let priors = EtasPriors::gamma();
    let s = build_surrogate(&cat, &BinningConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let theta = random_theta(&mut rng, 1.5);
        let params = priors.to_natural(&theta);
        let p1 = predictor_part1(&theta, cat.window(), &priors).unwrap();
        assert!(rel_err(p1.value, (100.0 * params.mu).ln()) < 1e-14);
        for row in s.rows().iter().filter(|r| r.part == Part::Triggered).step_by(7) {
            let e = cat.events()[row.event.unwrap()];
            let (lo, hi) = row.bin.unwrap();
            let want = (magnitude_factor(e.magnitude, params.k, params.alpha, 3.0).unwrap()
                * omori_integral(lo, hi, e.time, params.c, params.p).unwrap())
            .ln();
            let got = predictor_part2(&theta, row, &cat, &priors).unwrap().value;
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
        for h in (0..cat.len()).step_by(5) {
            let want = conditional_intensity(cat.events()[h].time, &cat, &params).ln();
            let got = predictor_part3(&theta, h, &cat, &priors).unwrap().value;
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

#[test]
fn part2_full_omori_mass() {
    // K = 1, c = 0.5, p = 2 at theta = 0 through median-matched lognormals
    let priors = EtasPriors {
        mu: PriorSpec::lognormal(0.0, 1.0).unwrap(),
        k: PriorSpec::lognormal(0.0, 1.0).unwrap(),
        alpha: PriorSpec::lognormal(0.0, 1.0).unwrap(),
        c: PriorSpec::lognormal(0.5f64.ln(), 1.0).unwrap(),
        p: PriorSpec::lognormal(2f64.ln(), 1.0).unwrap(),
    };
    let w = ObservationWindow::new(0.0, 1e13, 3.0).unwrap();
    let cat = EventCatalog::new(vec![Event { time: 0.0, magnitude: 3.0 }], w, TiePolicy::Reject).unwrap();
    let cfg = BinningConfig::new(1e14, 2.0, 0).unwrap();
    let s = build_surrogate(&cat, &cfg).unwrap();
    let row = s.rows().iter().find(|r| r.part == Part::Triggered).unwrap();
    let pred = predictor_part2(&InternalTheta::zeros(), row, &cat, &priors).unwrap();
    // the tail beyond 1e13 carries 0.25 / (0.5 + 1e13) of the mass
    assert!((pred.value - 0.5f64.ln()).abs() < 1e-12);
    assert_eq!(pred.gradient[2], 0.0);
    assert_eq!(pred.gradient[0], 0.0);
}

#[test]
fn first_event_and_poisson_intensity() {
    let cat = clustered_catalog(3);
    let priors = EtasPriors::gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let theta = random_theta(&mut rng, 1.0);
    let first = predictor_part3(&theta, 0, &cat, &priors).unwrap();
    assert!(rel_err(first.value, priors.to_natural(&theta).mu.ln()) < 1e-14);
    assert!((1..5).all(|j| first.gradient[j] == 0.0));
    assert!(first.gradient[0] > 0.0);

    // theta_K far in the lower tail of a lognormal makes K negligible
    let mut priors = priors;
    priors.k = PriorSpec::lognormal(-300.0, 1.0).unwrap();
    let params = priors.to_natural(&theta);
    for h in 0..cat.len() {
        let v = predictor_part3(&theta, h, &cat, &priors).unwrap().value;
        assert!(rel_err(v, params.mu.ln()) < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = BinningConfig::default();
    for draw in 0..100 {
        let cat = if draw % 2 == 0 {
            clustered_catalog(100 + draw)
        } else {
            random_catalog(10, 30.0, 200 + draw)
        };
        let priors = prior_sets()[(draw / 2 % 2) as usize];
        let theta = random_theta(&mut rng, 1.5);
        let s = build_surrogate(&cat, &cfg).unwrap();
        check_gradient("part I", |t| predictor_part1(t, cat.window(), &priors).unwrap(), &theta);
        for row in s.rows().iter().filter(|r| r.part == Part::Triggered).step_by(11) {
            check_gradient("part II", |t| predictor_part2(t, row, &cat, &priors).unwrap(), &theta);
        }
        for h in (0..cat.len()).step_by(3) {
            check_gradient("part III", |t| predictor_part3(t, h, &cat, &priors).unwrap(), &theta);
        }
    }
}

#[test]
fn exact_at_expansion_point() {
    let cat = random_catalog(100, 200.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = build_surrogate(&cat, &BinningConfig::default()).unwrap();
    for i in 0..50 {
        let priors = prior_sets()[i % 2];
        let theta = random_theta(&mut rng, 1.5);
        let approx = approx_log_likelihood(&theta, &theta, &s, &priors).unwrap();
        let exact = exact_log_likelihood(&cat, &priors.to_natural(&theta));
        assert!(rel_err(approx, exact) < 1e-10, "{theta:?}: {approx} vs {exact}");
    }
}

#[test]
fn background_direction_is_exact_under_log_link() {
    let mut priors = EtasPriors::gamma();
    priors.mu = PriorSpec::lognormal(-1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // the Part-I predictor on its own, on a realistic catalog
    let cat = clustered_catalog(9);
    let theta_star = random_theta(&mut rng, 1.0);
    let p1 = predictor_part1(&theta_star, cat.window(), &priors).unwrap();
    assert!((p1.gradient[0] - 1.0).abs() < 1e-15);
    for i in 0..=100 {
        let mut theta = theta_star;
        theta[0] += -5.0 + 0.1 * i as f64;
        let exact = predictor_part1(&theta, cat.window(), &priors).unwrap().value;
        let lin = p1.linear(&(theta - theta_star));
        assert!(rel_err(lin, exact) < 1e-10);
    }

    // whole approximation on a one-event catalog, where Part III is ln mu
    let w = ObservationWindow::new(0.0, 50.0, 3.0).unwrap();
    let one = EventCatalog::new(vec![Event { time: 12.0, magnitude: 4.2 }], w, TiePolicy::Reject).unwrap();
    let s = build_surrogate(&one, &BinningConfig::default()).unwrap();
    let lin = s.linearize(&theta_star, &priors).unwrap();
    for i in 0..=100 {
        let mut theta = theta_star;
        theta[0] += -5.0 + 0.1 * i as f64;
        let exact = exact_log_likelihood(&one, &priors.to_natural(&theta));
        assert!(rel_err(lin.log_likelihood(&theta), exact) < 1e-10, "offset {}", theta[0] - theta_star[0]);
    }
}

#[test]
fn remainder_is_second_order() {
    let cat = clustered_catalog(10);
    let priors = EtasPriors::gamma();
    let s = build_surrogate(&cat, &BinningConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ratios = Vec::new();
    for _ in 0..100 {
        let theta_star = random_theta(&mut rng, 1.0);
        let dir = random_theta(&mut rng, 1.0).normalize();
        let lin = s.linearize(&theta_star, &priors).unwrap();
        let err = |eps: f64| {
            let theta = theta_star + eps * dir;
            (lin.log_likelihood(&theta) - exact_log_likelihood(&cat, &priors.to_natural(&theta))).abs()
        };
        let (e1, e2) = (err(2e-3), err(1e-3));
        // remainder constant stays finite
        assert!((e1 / 4e-6).is_finite());
        if e2 > 1e-9 {
            ratios.push(e1 / e2);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!(ratios.len() > 50 && (3.5..4.5).contains(&median), "{} ratios, median {median}", ratios.len());
}

#[test]
fn linearized_posterior_is_strictly_concave() {
    let cat = clustered_catalog(12);
    let s = build_surrogate(&cat, &BinningConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..20 {
        let priors = prior_sets()[i % 2];
        let theta_star = random_theta(&mut rng, 1.5);
        let lin = s.linearize(&theta_star, &priors).unwrap();
        let d = lin.derivatives(&(theta_star + random_theta(&mut rng, 0.5)));
        let eig = SymmetricEigen::new(d.hessian).eigenvalues;
        assert!(eig.iter().all(|&v| v <= -1.0 + 1e-9), "{eig:?}");
    }
}
