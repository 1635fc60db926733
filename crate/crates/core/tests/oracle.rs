use std::f64::consts::LN_2;

use approx::assert_abs_diff_eq;
use llp::oracle::{
    classifier_posterior_and_weights, equilibrium_value, minimize_game_value, numeric_best_response,
    optimal_discriminator_closed_form, optimal_generator, random_simplex, run_checks, single_bag_kl,
    total_variation, BestResponse, Check, TabularWorld,
};
use llp::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world(densities: Vec<Vec<f64>>, priors: Vec<Vec<f64>>, g: Option<Vec<f64>>) -> TabularWorld {
    TabularWorld::new(densities, priors, g).unwrap()
}

#[test]
fn closed_form_on_a_single_point() {
    let w = world(vec![vec![1.0]], vec![vec![0.7, 0.3]], Some(vec![1.0]));
    let d = optimal_discriminator_closed_form(&w).unwrap();
    for (got, want) in d.rows[0].iter().zip([0.35, 0.15, 0.5]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
    }
}

#[test]
fn closed_form_without_generator_mass_is_the_prior() {
    let w = world(vec![vec![0.4, 0.6, 0.0]], vec![vec![0.2, 0.5, 0.3]], Some(vec![0.0, 0.0, 1.0]));
    let d = optimal_discriminator_closed_form(&w).unwrap();
    for s in 0..2 {
        for (got, want) in d.rows[s].iter().zip([0.2, 0.5, 0.3, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }
}

#[test]
fn two_bag_weights() {
    let w = world(vec![vec![0.2, 0.8], vec![0.6, 0.4]], vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
    let post = classifier_posterior_and_weights(&w).unwrap();
    assert_abs_diff_eq!(post[0].weights[0], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(post[0].weights[1], 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(post[0].posterior[1], 0.75, epsilon = 1e-12);
}

#[test]
fn zero_mass_point_is_undefined() {
    let w = world(vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]], None);
    assert!(matches!(classifier_posterior_and_weights(&w), Err(Error::UndefinedPoint { point: 1 })));
}

#[test]
fn single_bag_posterior_is_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = TabularWorld::random(&mut rng, 4, 1, 3, false);
    for _ in 0..3 {
        let w = base.with_generator(random_simplex(&mut rng, 4)).unwrap();
        let d = numeric_best_response(&w, &BestResponse::seeded(1)).unwrap();
        for s in 0..4 {
            for (q, p) in d.normalized_posterior(s).iter().zip(&w.priors[0]) {
                assert_abs_diff_eq!(*q, *p, epsilon = 1e-4);
            }
        }
        assert!(single_bag_kl(&w, &d) < 1e-7);
    }
}

#[test]
fn numeric_matches_closed_form_on_two_bags() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = TabularWorld::random(&mut rng, 3, 2, 2, true);
    let numeric = numeric_best_response(&w, &BestResponse::seeded(4)).unwrap();
    let exact = optimal_discriminator_closed_form(&w).unwrap();
    assert!(numeric.max_abs_deviation(&exact) < 1e-4);
}

#[test]
fn point_mass_prior_drives_posterior_to_one() {
    let w = world(vec![vec![1.0]], vec![vec![1.0, 0.0]], Some(vec![1.0]));
    let d = numeric_best_response(&w, &BestResponse::default()).unwrap();
    assert_abs_diff_eq!(d.normalized_posterior(0)[0], 1.0, epsilon = 1e-4);
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = TabularWorld::random(&mut rng, 4, 3, 3, true);
    let opts = BestResponse { max_iterations: 1, restarts: 1, tolerance: 1e-14, ..BestResponse::default() };
    match numeric_best_response(&w, &opts) {
        Err(Error::NonConvergence { best, .. }) => assert_eq!(best.len(), 4),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn optimal_generator_examples() {
    let w = world(vec![vec![0.1, 0.2, 0.7]], vec![vec![0.5, 0.5]], None);
    assert_eq!(optimal_generator(&w), vec![0.1, 0.2, 0.7]);
    let w = world(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.5, 0.5]; 2], None);
    assert_eq!(optimal_generator(&w), vec![0.5, 0.5]);
}

#[test]
fn numeric_game_minimum_is_the_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let w = TabularWorld::random(&mut rng, 5, 3, 2, false);
        let g = minimize_game_value(&w, 1e-8).unwrap();
        assert!(total_variation(&g, &optimal_generator(&w)) < 1e-4);
    }
}

#[test]
fn equilibrium_value_examples() {
    let one = world(vec![vec![1.0]], vec![vec![0.5, 0.5]], None);
    let v = equilibrium_value(&one).unwrap();
    assert_abs_diff_eq!(v.divergence_part, -2.0 * LN_2, epsilon = 1e-12);
    assert_abs_diff_eq!(v.ce_part, LN_2, epsilon = 1e-12);
    assert_abs_diff_eq!(v.total, -3.0 * LN_2, epsilon = 1e-12);

    let two = world(vec![vec![0.5, 0.5], vec![0.3, 0.7]], vec![vec![0.4, 0.6], vec![0.9, 0.1]], None);
    let v = equilibrium_value(&two).unwrap();
    assert_abs_diff_eq!(v.divergence_part, 2.0 * LN_2 - 3.0 * 3f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(v.divergence_part, -1.9095, epsilon = 1e-4);
}

#[test]
fn all_checks_pass_and_report_lines() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = TabularWorld::random(&mut rng, 4, 2, 3, true);
    let report = run_checks(&w, Check::All, 0).unwrap();
    assert!(report.passed(), "{report}");
    let text = report.to_string();
    assert!(text.lines().all(|l| l.starts_with("PASS") || l.starts_with("FAIL")));
    assert!(text.lines().count() >= 5);
}

#[test]
fn world_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = TabularWorld::random(&mut rng, 3, 2, 2, true);
    let path = dir.path().join("world.json");
    w.save(&path).unwrap();
    assert_eq!(TabularWorld::load(&path).unwrap(), w);
    let bad = r#"{"support_size":2,"n":1,"k":2,"bag_densities":[[0.5,0.4]],"priors":[[0.5,0.5]]}"#;
    assert!(matches!(TabularWorld::from_json_str(bad), Err(Error::Validation(_))));
}
