mod common;

use llp::bagset::ProportionVector;
use llp::harness::error_rate;
use llp::losses::{exact_proportion_term, llp_gan_disc_loss, proportion_ce_grad};
use llp::netzoo::{overparam_softmax, softmax};
use llp::oracle::{
    classifier_posterior_and_weights, game_value, optimal_discriminator_closed_form, optimal_generator, random_simplex,
    TabularWorld,
};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(seed: u64, n: usize, k: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    llp::netzoo::softmax::overparam_softmax_rows(common::random_logits(&mut rng, n, k, 4.0).view())
}

fn prior(seed: u64, k: usize) -> ProportionVector<f64> {
    common::random_prior(&mut ChaCha8Rng::seed_from_u64(seed), k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jensen_bound_dominates(seed in any::<u64>(), bags in 1usize..4, n in 1usize..8, k in 2usize..5) {
        let real: Vec<_> = (0..bags).map(|b| rows(seed.wrapping_add(b as u64), n, k)).collect();
        let priors: Vec<_> = (0..bags).map(|b| prior(seed ^ (b as u64 + 99), k)).collect();
        let views: Vec<ArrayView2<f64>> = real.iter().map(|r| r.view()).collect();
        let fake = rows(seed ^ 7, 2, k);
        let lb = llp_gan_disc_loss(&views, fake.view(), &priors, 1.0).unwrap().term("lb_sup").unwrap();
        let exact = exact_proportion_term(&views, &priors).unwrap();
        prop_assert!(lb <= exact + 1e-12, "bound {lb} above exact {exact}");
        if n == 1 {
            prop_assert!((lb - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn gibbs_inequality(seed in any::<u64>(), k in 2usize..6) {
        // cross entropy of a prior against any bag mean is minimized at the prior itself
        let p = prior(seed, k);
        let q = rows(seed ^ 3, 3, k);
        let q_norm = llp::losses::normalize_posterior_rows(q.view());
        let (ce, _) = proportion_ce_grad(std::slice::from_ref(&p), &[q_norm.view()]).unwrap();
        prop_assert!(ce >= p.entropy() - 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 2..8), shift in -50.0f64..50.0) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn overparameterized_softmax_fake_entry_is_the_complement(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let p = overparam_softmax(&logits).unwrap();
        let k = logits.len();
        prop_assert_eq!(p.len(), k + 1);
        let real: f64 = p[..k].iter().sum();
        prop_assert!((p[k] - (1.0 - real)).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn final_classifier_ignores_the_generator(seed in any::<u64>(), s in 1usize..6, n in 1usize..4, k in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = TabularWorld::random(&mut rng, s, n, k, false);
        let reference = classifier_posterior_and_weights(&world).unwrap();
        for _ in 0..3 {
            let w = world.with_generator(random_simplex(&mut rng, s)).unwrap();
            let d = optimal_discriminator_closed_form(&w).unwrap();
            for (point, r) in reference.iter().enumerate() {
                let post = d.normalized_posterior(point);
                for (a, b) in post.iter().zip(&r.posterior) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn game_value_is_minimized_by_the_scaled_mixture(seed in any::<u64>(), s in 1usize..6, n in 1usize..4, k in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = TabularWorld::random(&mut rng, s, n, k, false);
        let best = game_value(&world, &optimal_generator(&world)).unwrap();
        for _ in 0..5 {
            let g = random_simplex(&mut rng, s);
            prop_assert!(game_value(&world, &g).unwrap() >= best - 1e-10);
        }
    }

    #[test]
    fn bag_order_does_not_change_the_objective(seed in any::<u64>(), bags in 2usize..5, k in 2usize..4) {
        let real: Vec<_> = (0..bags).map(|b| rows(seed.wrapping_add(b as u64), 3, k)).collect();
        let priors: Vec<_> = (0..bags).map(|b| prior(seed ^ (b as u64 + 11), k)).collect();
        let fake = rows(seed ^ 5, 4, k);
        let views: Vec<ArrayView2<f64>> = real.iter().map(|r| r.view()).collect();
        let forward = llp_gan_disc_loss(&views, fake.view(), &priors, 0.7).unwrap().total;
        let rev_views: Vec<_> = views.iter().rev().copied().collect();
        let rev_priors: Vec<_> = priors.iter().rev().cloned().collect();
        let backward = llp_gan_disc_loss(&rev_views, fake.view(), &rev_priors, 0.7).unwrap().total;
        prop_assert!((forward - backward).abs() < 1e-10);
    }

    #[test]
    fn error_rate_is_a_percentage(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)) {
        let (pred, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let e = error_rate(&pred, &truth).unwrap();
        prop_assert!((0.0..=100.0).contains(&e));
        prop_assert_eq!(error_rate(&truth, &truth).unwrap(), 0.0);
    }
}
